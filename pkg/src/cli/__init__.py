"""
CLI Package - Ligne de commande

Sous-commandes train, check, eval, count et oracle-dump.
"""

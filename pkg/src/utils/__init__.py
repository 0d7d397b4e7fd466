"""
Utils Package - Utilitaires

Ce package contient les fonctions utilitaires pour :
- Horodatage, empreintes de contenu et écriture CSV/JSON
- Flux aléatoires dérivés d'une graine
- Points de contrôle binaires des réseaux
"""

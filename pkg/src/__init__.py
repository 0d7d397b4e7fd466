"""
MF-PPO - Source Package

Package principal contenant tous les modules de l'application.
"""

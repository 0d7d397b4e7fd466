import csv
import hashlib
import json
import os
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np


def get_timestamp() -> str:
    """
    Retourne un timestamp formaté.

    Returns:
        str: Timestamp au format "YYYY-MM-DD HH:MM:SS"
    """
    return time.strftime("%Y-%m-%d %H:%M:%S")


def content_hash(*sources: Union[str, bytes, Path]) -> str:
    """
    Empreinte sha256 du contenu de fichiers et/ou de blocs d'octets.

    Args:
        sources: Chemins de fichiers (lus en binaire), chaînes ou octets

    Returns:
        str: Empreinte hexadécimale
    """
    digest = hashlib.sha256()
    for source in sources:
        if isinstance(source, bytes):
            digest.update(source)
        elif isinstance(source, Path) or (isinstance(source, str) and os.path.isfile(source)):
            with open(source, "rb") as handle:
                digest.update(handle.read())
        else:
            digest.update(str(source).encode("utf-8"))
    return digest.hexdigest()


def ensure_dir(path: Union[str, Path]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# Fonction pour écrire un rapport CSV à schéma fixe
def write_csv(path: Union[str, Path], rows: Iterable[Dict[str, Any]], fieldnames: Optional[Sequence[str]] = None) -> Path:
    """
    Écrit des lignes dans un CSV (fin de ligne "\\n" pour des sorties comparables octet à octet).

    Args:
        path: Fichier de sortie
        rows: Lignes sous forme de dictionnaires
        fieldnames: Colonnes ; par défaut les clés de la première ligne

    Returns:
        Path: Chemin écrit
    """
    rows = list(rows)
    columns = list(fieldnames) if fieldnames is not None else (list(rows[0].keys()) if rows else [])
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


def append_csv_row(path: Union[str, Path], row: Dict[str, Any], fieldnames: Sequence[str]) -> None:
    path = Path(path)
    new_file = not path.exists()
    ensure_dir(path.parent)
    with open(path, "a", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames), lineterminator="\n")
        if new_file:
            writer.writeheader()
        writer.writerow(row)


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, ensure_ascii=False, default=str)
        handle.write("\n")
    return path


def spawn_streams(seed: Union[int, np.random.SeedSequence], count: int) -> List[np.random.Generator]:
    """Flux aléatoires indépendants dérivés d'une même graine."""
    sequence = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in sequence.spawn(count)]


def child_seed(rng: np.random.Generator) -> np.random.SeedSequence:
    """Graine fille tirée d'un générateur (consomme une valeur du flux)."""
    return np.random.SeedSequence(int(rng.integers(0, 2**63 - 1)))

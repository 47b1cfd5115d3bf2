"""Regenerate the bundled toy dataset in src/kinship/data/toy/.

Three families of four (father, mother, son, daughter), 8-dim embeddings
scattered around a per-family center.
"""

import itertools
from pathlib import Path

import numpy as np

from kinship.embedding import EmbeddingStore
from kinship.io import write_embeddings, write_pairs, write_rows
from kinship.verification import PairQuery

OUT = Path(__file__).resolve().parents[1] / "src" / "kinship" / "data" / "toy"
ROLES = ("F", "M", "S", "D")
KIN_ROLES = [("F", "S"), ("F", "D"), ("M", "S"), ("M", "D"), ("S", "D")]
FAMILIES = ("F0001", "F0002", "F0003")


def main(seed=20200516, dim=8, noise=0.35):
    rng = np.random.default_rng(seed)
    ids, rows, family_of = [], [], {}
    for fam in FAMILIES:
        center = rng.normal(size=dim)
        center /= np.linalg.norm(center)
        for role in ROLES:
            image_id = f"{fam}/{role}"
            ids.append(image_id)
            rows.append(np.round(center + noise * rng.normal(size=dim), 6))
            family_of[image_id] = fam
    write_embeddings(OUT / "embeddings.csv", EmbeddingStore.from_arrays(ids, rows))
    write_rows(OUT / "families.csv", [["image_id", "family_id"]] + [[i, family_of[i]] for i in ids])

    pairs = []
    for fam in FAMILIES:
        for r1, r2 in KIN_ROLES:
            pairs.append((f"{fam}/{r1}", f"{fam}/{r2}", f"{r1}-{r2}", 1))
    for (fa, fb), (r1, r2) in zip(itertools.cycle(itertools.permutations(FAMILIES, 2)), KIN_ROLES * 3):
        pairs.append((f"{fa}/{r1}", f"{fb}/{r2}", f"{r1}-{r2}", 0))
    queries = [PairQuery(f"p{k:02d}", a, b, t, y) for k, (a, b, t, y) in enumerate(pairs)]
    write_pairs(OUT / "pairs.csv", queries)

    probes = [("P0", "F0001/S"), ("P0", "F0001/D"), ("P1", "F0002/F"), ("P2", "F0003/M")]
    probe_ids = {i for _, i in probes}
    gallery = [i for i in ids if i not in probe_ids]
    write_rows(OUT / "probes.csv", [["probe_id", "image_id"]] + [list(p) for p in probes])
    write_rows(OUT / "gallery.csv", [["gallery_index", "image_id"]] + [[str(k), i] for k, i in enumerate(gallery)])


if __name__ == "__main__":
    main()

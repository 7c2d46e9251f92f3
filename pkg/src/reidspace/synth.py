"""Synthetic embedding corpora with planted, recoverable structure.

Each image vector is the sum of independent parts living in disjoint
coordinate blocks that are then mixed by a seeded random rotation:

* an identity mean, drawn once per identity in the identity block;
* a nuisance draw, fresh per image in the nuisance block (camera/session);
* a per-identity attribute class effect, one block per attribute;
* an optional constant corpus-wide offset in its own coordinate;
* isotropic Gaussian noise across all coordinates.

``identity_variance`` and ``nuisance_variance`` are block totals (the
coordinate std is ``sqrt(variance / block_dim)``); ``noise_variance`` is
per coordinate. The rotated block bases are exported as ground truth so
tests can check what a fitted subspace actually captured. Generation is
deterministic: one seeded generator, fixed draw order (rotation, identity
means, attribute classes, nuisance, noise).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import EmbeddingCorpus, EmbeddingRecord


@dataclass(frozen=True)
class AttributeSpec:
    """A planted categorical attribute: block width = number of classes."""

    name: str
    classes: int
    effect_norm: float


@dataclass(frozen=True)
class SynthConfig:
    dimension: int = 64
    identities: int = 20
    gallery_per_identity: int = 4
    probe_per_identity: int = 2
    identity_variance: float = 1.0
    identity_dim: int = 8
    nuisance_variance: float = 0.0
    nuisance_dim: int = 1
    noise_variance: float = 0.0
    attributes: tuple[AttributeSpec, ...] = ()
    offset_norm: float = 0.0
    dataset: str = "synth"
    seed: int = 0


@dataclass(eq=False)
class GroundTruth:
    """Rotated block bases (rows are unit vectors in embedding space)."""

    config: SynthConfig
    identity_basis: np.ndarray
    nuisance_basis: np.ndarray
    attribute_bases: dict[str, np.ndarray]
    offset_vector: np.ndarray | None

    def to_json_dict(self) -> dict:
        return {
            "config": _config_dict(self.config),
            "identity_basis": self.identity_basis.tolist(),
            "nuisance_basis": self.nuisance_basis.tolist(),
            "attribute_bases": {k: v.tolist() for k, v in self.attribute_bases.items()},
            "offset_vector": None if self.offset_vector is None else self.offset_vector.tolist(),
        }


def _config_dict(config: SynthConfig) -> dict:
    out = asdict(config)
    out["attributes"] = [asdict(a) for a in config.attributes]
    return out


def _validate(config: SynthConfig) -> None:
    c = config
    if c.dimension < 1 or c.identities < 1 or c.gallery_per_identity < 1 or c.probe_per_identity < 1:
        raise ValueError("dimensions and counts must be positive")
    if c.identity_dim < 1 or c.nuisance_dim < 1:
        raise ValueError("dimensions and counts must be positive")
    if min(c.identity_variance, c.nuisance_variance, c.noise_variance, c.offset_norm) < 0:
        raise ValueError("variances must be non-negative")
    for spec in c.attributes:
        if spec.classes < 2:
            raise ValueError(f"attribute {spec.name!r} needs at least 2 classes")
        if spec.effect_norm < 0:
            raise ValueError(f"attribute {spec.name!r} has negative effect norm")
    names = [spec.name for spec in c.attributes]
    if len(set(names)) != len(names):
        raise ValueError("duplicate attribute names")
    budget = c.identity_dim + c.nuisance_dim + sum(s.classes for s in c.attributes)
    if c.offset_norm > 0:
        budget += 1
    if budget > c.dimension:
        raise ValueError(
            f"blocks need {budget} dimensions but the embedding has {c.dimension}"
        )


def _random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    # QR of a Gaussian matrix; fixing the R diagonal sign makes it Haar and
    # removes the LAPACK sign ambiguity
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))[None, :]


def generate(config: SynthConfig) -> tuple[EmbeddingCorpus, GroundTruth]:
    """Generate a corpus and its ground truth. Same config, same bytes."""
    _validate(config)
    c = config
    rng = np.random.default_rng(c.seed)
    d = c.dimension

    rotation = _random_rotation(rng, d)

    id_block = np.arange(0, c.identity_dim)
    nuis_block = np.arange(id_block[-1] + 1, id_block[-1] + 1 + c.nuisance_dim)
    cursor = nuis_block[-1] + 1
    attr_blocks: dict[str, np.ndarray] = {}
    for spec in c.attributes:
        attr_blocks[spec.name] = np.arange(cursor, cursor + spec.classes)
        cursor += spec.classes
    offset_dim = cursor if c.offset_norm > 0 else None

    id_scale = np.sqrt(c.identity_variance / c.identity_dim)
    nuis_scale = np.sqrt(c.nuisance_variance / c.nuisance_dim)
    noise_scale = np.sqrt(c.noise_variance)

    identity_means = id_scale * rng.standard_normal((c.identities, c.identity_dim))
    attr_classes = {
        spec.name: rng.integers(0, spec.classes, size=c.identities)
        for spec in c.attributes
    }
    per_identity = c.gallery_per_identity + c.probe_per_identity
    n_images = c.identities * per_identity
    nuisance = nuis_scale * rng.standard_normal((n_images, c.nuisance_dim))
    noise = noise_scale * rng.standard_normal((n_images, d))

    base = np.zeros((n_images, d), dtype=np.float64)
    records_meta = []
    row = 0
    for ident in range(c.identities):
        identity_id = f"{c.dataset}-id{ident:04d}"
        for role, count in (("gallery", c.gallery_per_identity), ("probe", c.probe_per_identity)):
            for j in range(count):
                base[row, id_block] = identity_means[ident]
                base[row, nuis_block] = nuisance[row]
                for spec in c.attributes:
                    cls = int(attr_classes[spec.name][ident])
                    base[row, attr_blocks[spec.name][cls]] += spec.effect_norm
                if offset_dim is not None:
                    base[row, offset_dim] += c.offset_norm
                image_id = f"{c.dataset}-id{ident:04d}-{role[0]}{j:03d}"
                attributes = {
                    spec.name: str(int(attr_classes[spec.name][ident]))
                    for spec in c.attributes
                }
                records_meta.append((image_id, identity_id, role, attributes))
                row += 1
    base += noise
    vectors = (base @ rotation.T).astype(np.float32)

    records = [
        EmbeddingRecord(image_id, identity_id, role, c.dataset, attributes, vectors[i])
        for i, (image_id, identity_id, role, attributes) in enumerate(records_meta)
    ]
    corpus = EmbeddingCorpus(d, records)
    truth = GroundTruth(
        config=c,
        identity_basis=rotation[:, id_block].T.copy(),
        nuisance_basis=rotation[:, nuis_block].T.copy(),
        attribute_bases={
            name: rotation[:, block].T.copy() for name, block in attr_blocks.items()
        },
        offset_vector=None if offset_dim is None else c.offset_norm * rotation[:, offset_dim].copy(),
    )
    return corpus, truth


def ground_truth_json(truth: GroundTruth) -> str:
    return json.dumps(truth.to_json_dict(), indent=2) + "\n"


def write_ground_truth(truth: GroundTruth, path) -> None:
    Path(path).write_text(ground_truth_json(truth), encoding="utf-8")

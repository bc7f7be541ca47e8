"""Run reports: independent invariant checks on augmented payloads.

The checks only look at the source example, the written payload and the
environment, so they can be rerun on files produced elsewhere (``eval``).
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from .augmenter import FieldCache, kl_per_dimension
from .datamodel import Example, decompose_moving, dumps_example
from .objectives import DEFAULT_CONTACT_MARGIN
from .transforms import TransformBounds

BBOX_SLACK = 1e-6
DMD_VOXELS = 2.0
RIGID_RTOL = 1e-9


def _moved_points(example: Example, moved):
    pts = [example.object_by_id(i).points for i in moved]
    radii = [np.full(p.shape[:2], example.object_by_id(i).radius) for i, p in zip(moved, pts)]
    # (T, P_total, k) so that rigidity can be checked per timestep
    return np.concatenate(pts, axis=1), np.concatenate(radii, axis=1)


def _pairwise(points):
    diff = points[:, :, None, :] - points[:, None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def check_augmentation(source: Example, payload: Example, fields: FieldCache,
                       contact_margin: float = DEFAULT_CONTACT_MARGIN) -> dict:
    """Invariant checks for one written augmentation.

    A payload identical to its source counts as a rejection and is only
    checked for the label.
    """
    accepted = dumps_example(payload) != dumps_example(source)
    out = {"accepted": accepted, "label": payload.label == source.label}
    if not accepted:
        return out
    moved, stationary = decompose_moving(source)
    env = fields(source, stationary)
    orig, radii = _moved_points(source, moved)
    aug, _ = _moved_points(payload, moved)
    offsets = (radii + contact_margin).reshape(-1)
    k = orig.shape[-1]
    v_orig, _ = env.query(orig.reshape(-1, k))
    v_aug, _ = env.query(aug.reshape(-1, k))
    occ_orig = v_orig - offsets <= 0
    occ_aug = v_aug - offsets <= 0
    lo, hi = env.workspace_lower, env.workspace_upper
    flat = aug.reshape(-1, k)
    i = int(np.argmin(v_orig - offsets))
    delta = float(abs(v_orig[i] - v_aug[i]))
    d_orig, d_aug = _pairwise(orig), _pairwise(aug)
    out.update({
        "occupancy": bool(np.all(occ_orig == occ_aug)),
        "mismatched_points": int(np.sum(occ_orig != occ_aug)),
        "bbox": bool(np.all(flat >= lo - BBOX_SLACK) and np.all(flat <= hi + BBOX_SLACK)),
        "abs_delta_min_sdf": delta,
        "dmd": delta <= DMD_VOXELS * env.resolution,
        "rigid": bool(np.allclose(d_aug, d_orig, rtol=RIGID_RTOL, atol=1e-12)),
    })
    return out


def _rate(flags):
    flags = list(flags)
    return float(np.mean(flags)) if flags else None


def summarize(checks, records=None, transforms=None, bounds: TransformBounds | None = None,
              n_examples: int = 0) -> dict:
    """Counts, pass rates and diversity over a run.

    ``checks`` come from ``check_augmentation``; ``records`` are the
    per-augmentation solver diagnostics (when available) and give the raw,
    pre-gating mismatch rate. Diversity is measured on accepted transforms.
    """
    checks = list(checks)
    acc = [c for c in checks if c["accepted"]]
    deltas = [c["abs_delta_min_sdf"] for c in acc]
    summary = {
        "counts": {"examples": n_examples, "augmentations": len(checks), "accepted": len(acc)},
        "rates": {
            "acceptance": _rate(c["accepted"] for c in checks),
            "occupancy": _rate(c["occupancy"] for c in acc),
            "bbox": _rate(c["bbox"] for c in acc),
            "dmd": _rate(c["dmd"] for c in acc),
            "label": _rate(c["label"] for c in checks),
            "rigid": _rate(c["rigid"] for c in acc),
        },
        "median_abs_delta_min_sdf": float(np.median(deltas)) if deltas else None,
    }
    if records is not None:
        records = list(records)
        mism = [r.get("mismatch", 0) for r in records if "mismatch" in r]
        npts = [r.get("n_points", 0) for r in records if "mismatch" in r]
        summary["rates"]["raw_mismatch"] = _rate(m > 0 for m in mism)
        summary["rates"]["raw_mismatch_points"] = float(sum(mism) / sum(npts)) if sum(npts) else None
        summary["reasons"] = dict(sorted(Counter(x for r in records for x in r.get("reasons", [])).items()))
    if transforms is not None and bounds is not None:
        acc_t = [t for t, c in zip(transforms, checks) if c["accepted"]]
        if acc_t:
            per_dim = kl_per_dimension(np.stack(acc_t), bounds)
            summary["diversity"] = {"kl_per_dim": per_dim.tolist(), "kl": float(per_dim.sum()),
                                    "diversity": float(np.exp(-per_dim.sum()))}
        else:
            summary["diversity"] = None
    return summary

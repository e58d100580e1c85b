"""Input validation helpers used by the estimator facade and the CLI."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError, NotFittedError, UsageError


def check_positive(name, value, *, strict=True):
    """Validate a numeric hyperparameter; returns the value unchanged."""
    ok = value > 0 if strict else value >= 0
    if not ok:
        bound = "> 0" if strict else ">= 0"
        raise UsageError(f"{name} must be {bound}, got {value!r}")
    return value


def check_choice(name, value, choices):
    if value not in choices:
        raise UsageError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value


def check_finite_array(name, arr):
    """Reject arrays containing NaN or infinity."""
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def check_feature_store(store):
    """Check that every record in a feature store has the declared shape."""
    regions, dim = store.regions, store.dim
    for image_id, fs in store.items():
        if fs.regions.shape != (regions, dim):
            raise DataError(
                f"feature shape mismatch for {image_id!r}: "
                f"got {fs.regions.shape}, store declares ({regions}, {dim})"
            )
        check_finite_array(f"features[{image_id!r}]", fs.regions)
    return store


def check_ids_covered(image_ids, store, *, what="features"):
    """Every requested image id must be present in the store/mapping."""
    missing = [i for i in image_ids if i not in store]
    if missing:
        shown = ", ".join(repr(m) for m in sorted(missing)[:5])
        more = "" if len(missing) <= 5 else f" (+{len(missing) - 5} more)"
        raise DataError(f"{len(missing)} image ids missing from {what}: {shown}{more}")
    return image_ids


def check_is_fitted(estimator, attributes):
    """Raise NotFittedError unless all trailing-underscore attributes exist."""
    missing = [a for a in attributes if not hasattr(estimator, a)]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit first "
            f"(missing {', '.join(missing)})"
        )
    return estimator

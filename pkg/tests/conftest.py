import numpy as np
import pytest

from shiftagg.data import PredictionBundle, SourceDataset, TargetDataset


def build_bundle(
    m=2,
    n_s=3,
    n_t=4,
    d2=1,
    d1=2,
    seed=0,
    with_features=True,
    with_oracle=False,
):
    """Small random bundle for plumbing tests."""
    rng = np.random.Generator(np.random.Philox(seed))
    source = SourceDataset(
        labels=rng.standard_normal((n_s, d2)),
        features=rng.standard_normal((n_s, d1)) if with_features else None,
    )
    target = TargetDataset(
        features=rng.standard_normal((n_t, d1)) if with_features else None,
        oracle_labels=rng.standard_normal((n_t, d2)) if with_oracle else None,
        n_samples_hint=n_t,
    )
    return PredictionBundle(
        model_names=tuple(f"m{k}" for k in range(m)),
        source_preds=rng.standard_normal((m, n_s, d2)),
        target_preds=rng.standard_normal((m, n_t, d2)),
        source=source,
        target=target,
    )


@pytest.fixture
def bundle_factory():
    return build_bundle

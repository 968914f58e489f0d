"""Named run variants for enrichment and architecture comparisons."""
from __future__ import annotations

ENRICHMENT_VARIANTS = ("DAW", "MAW", "WPA")
ARCHITECTURE_VARIANTS = ("zero_augmentation", "global_covariance", "classic_mha", "L13", "L29")


def ablation_suite(base) -> dict:
    """Eight configurations derived from ``base`` (a :class:`RunConfig`).

    Three whitening strategies with handcrafted features, then five
    single-change variants of ``base``: zero-valued features, whitening by
    the global (Euclidean mean) covariance, classic multihead attention, and
    sequence lengths 13 and 29. Each variant writes to its own run directory.
    """
    run_dir = base.paths["run_dir"]

    def variant(name, **changes):
        return base.replace(paths={"run_dir": f"{run_dir}/{name}"}, **changes)

    suite = {}
    for strategy in ENRICHMENT_VARIANTS:
        suite[strategy] = variant(strategy, enrichment={"strategy": strategy, "feature_source": "AVG_PSD", "k": 1})
    suite["zero_augmentation"] = variant("zero_augmentation", enrichment={"feature_source": "ZEROS"})
    suite["global_covariance"] = variant("global_covariance", enrichment={"strategy": "GLOBAL_COV"})
    suite["classic_mha"] = variant("classic_mha", model={"mha_kind": "CLASSIC"})
    suite["L13"] = variant("L13", model={"L": 13})
    suite["L29"] = variant("L29", model={"L": 29})
    return suite

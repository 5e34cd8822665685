"""Meta fine-tuning over a from-scratch mini transformer.

The heavy lifting happens in the C++ extension ``mft._mft``. Commands take a
:class:`ConfigMap`, the same key/value configuration the ``mft`` CLI reads.
"""

from ._mft import (
    ConfigMap,
    MftError,
    class_memberships,
    corrupt_labels,
    cosine,
    derive_seed,
    probe,
    run,
    sweep,
    synth_gen,
    typicality_multi,
    typicality_report,
    typicality_single,
)


def config(**overrides):
    """Default configuration with ``section__key=value`` style overrides."""
    cfg = ConfigMap()
    for key, value in overrides.items():
        cfg.set(key.replace("__", "."), str(value))
    return cfg


__all__ = [
    "ConfigMap",
    "MftError",
    "class_memberships",
    "config",
    "corrupt_labels",
    "cosine",
    "derive_seed",
    "probe",
    "run",
    "sweep",
    "synth_gen",
    "typicality_multi",
    "typicality_report",
    "typicality_single",
]

"""Thin exporters and runners bridging real (or stub) pretrained models to the
toolkit's NPY/JSON/JSONL formats. Adapters never run pipeline logic; they only
produce and consume the documented file surfaces."""

__version__ = "0.1.0"

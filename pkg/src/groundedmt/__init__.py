"""Visually grounded machine translation: a GRU encoder-decoder that attends
over detected-object features, trained with an object-masking loss and a
vision-weighted translation loss, plus the preprocessing pipeline and a
synthetic benchmark that makes the grounding behavior testable at desk
scale."""

__version__ = "0.1.0"

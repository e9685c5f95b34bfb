"""Desk-scale lab for gender-aware contrastive fine-tuning of encoder-decoder MT.

Modules: ``corpus`` (lexicon, filtering, vocabularies), ``synthlang``
(synthetic gendered translation task), ``numerics`` (tensors and autodiff),
``model`` (transformer seq2seq), ``losses``, ``trainer``, ``evaluation``,
``analysis``, ``pipeline`` and the ``cli`` entry point.
"""

__version__ = "0.1.0"

"""Prefix-tree contextual biasing for autoregressive token decoding.

The pipeline: ingest a biasing list into a :class:`~treebias.lexicon.BiasingLexicon`,
compile it into a :class:`~treebias.trie.PrefixTree`, then decode any
:class:`~treebias.scorers.Scorer` (toy n-gram, or a real model behind the
wire protocol) with the tree masking and reweighting each step's
distribution. Evaluation covers WER, gazetteer entities, and keyword
response times.
"""

__version__ = "0.1.0"

from __future__ import annotations

from treebias.lexicon import BiasingLexicon, LexiconPhrase


def lexicon_from_sequences(sequences) -> BiasingLexicon:
    """Wrap raw token sequences as a lexicon for tree-level tests."""
    phrases = tuple(
        LexiconPhrase(raw=" ".join(map(str, seq)), normalized=" ".join(map(str, seq)),
                      tokens=tuple(seq))
        for seq in sequences
    )
    return BiasingLexicon(phrases=phrases, source_tag="test")

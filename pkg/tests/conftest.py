from __future__ import annotations

import io
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from treebias.lexicon import char_vocabulary, load_biasing_list
from treebias.trie import build_tree


@pytest.fixture(scope="session")
def char_vocab():
    return char_vocabulary()


@pytest.fixture(scope="session")
def small_biasing_vocab():
    """Six letter tokens plus specials; matches the worked uniform examples."""
    return char_vocabulary("antechlorm")


@pytest.fixture()
def fig_lexicon(char_vocab):
    return load_biasing_list(io.StringIO("antenna\nanchor\nalarm\n"), char_vocab)


@pytest.fixture()
def fig_tree(fig_lexicon):
    return build_tree(fig_lexicon)

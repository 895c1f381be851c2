"""Synthetic English corpus generation.

A word-level bigram chain is fit to the original seed passage below, then
random walks over the chain produce unbounded text with realistic word
boundary statistics (mean word-aligned patch length near six bytes). This
keeps every experiment self-contained: no external dataset ships with or is
downloaded by this repository.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

SEED_TEXT = """
The town kept its rhythm by the river. Barges came up from the delta twice a
week, riding low with gravel and salt, and the lock keeper wrote each arrival
in a canvas ledger that had survived three floods. In 1907 the ledger listed
214 barges; by 1952 the count had fallen to 31, and the last commercial tow
passed through in 1968. The lock still works. Children crank the sluice on
summer afternoons to watch the chamber boil, and the keeper's cottage is a
small museum now, smelling of rope and lamp oil. Visitors sign their names
under a notice that asks them, politely, to leave the gate chains alone.

Bread was the other clock. The bakery on Foundry Lane lit its oven at four
and the smell drifted over the rooftops by five, so the early shift at the
mill never needed an alarm. A proper loaf wants only flour, water, salt, and
time; the skill is in knowing how the weather leans on the dough. Humid
mornings ask for a stiffer mix. Cold ones want patience. The baker kept a
chalkboard of starter feedings, and apprentices learned to read the bubbles
the way pilots read water, guessing what the culture would do three hours
ahead. A crust should crackle when it cools. If it stays silent, the oven was
too kind, and the crumb inside will be dense by evening.

Upstream, past the weir, an amateur astronomer kept her dome. She ground the
mirror herself over two winters, testing the curve with a knife edge and a
lamp, and she logged 1,400 hours of observation in her first decade. The
town's lights were a nuisance, so she petitioned the council for shielded
lamps along the quay, and when the new fixtures went in, the Milky Way came
back over the grain elevator like a rumor confirmed. On clear Octobers she
opened the dome to schoolchildren. Saturn did most of the arguing for her;
no one who has seen the rings through a decent eyepiece calls astronomy a
distant hobby afterward.

The library occupied a former customs house, and its reading room still had
the brass rail where clerks once weighed declarations. The collection ran to
40,000 volumes, strong in navigation, milling, and weather, with a locked
case of charts too brittle to circulate. The head librarian believed a
catalog was a kind of promise: every card a claim that the past could be
found again. When the card drawers gave way to terminals, she kept one
cabinet in the foyer, partly from sentiment and partly as a lesson, because
a system you can repair with a pencil has virtues a server never will.

Trades overlapped in the town the way currents overlap in a channel. The
cooper bought offcuts from the mill; the mill bought barrels back for flour;
the bakery returned the barrels full of day-old loaves for the ferry crews.
Money moved, but barter set the tempo, and the ledger habit ran deep. Even
the café by the bridge, which poured its first espresso in 1987, kept a
paper tally of regulars beside a machine that could have tracked them
perfectly well. Some habits are not inefficiencies. They are the town
remembering itself.

Storms tested all of it. The flood of 1936 took the footbridge and two
granaries, and the high-water mark is still painted on the customs house
wall, a blue line above the door lintel that tourists photograph without
quite believing. After the water fell, the town rebuilt the footbridge a
meter higher and planted willows along the cut, whose roots knit the bank
like cables. Engineers from the capital approved, later, of what the town
had already done. Rivers teach by repetition, the lock keeper liked to say,
and the town had been enrolled for three hundred years.

What holds such a place together is not nostalgia. It is maintenance. Gears
are greased, mirrors re-silvered, starters fed, cards refiled, willows
coppiced, and each small act assumes the town will still be there to need
it. A visitor once asked the baker what the secret was, expecting a recipe.
He wiped the counter, considered, and said that nothing here is secret; it
is only attended to. The river went on translating the weather into current,
the oven into bread, the night into a ledger of stars, and the town kept
its accounts in flour dust and brass.
"""


def _build_chain():
    words = SEED_TEXT.split()
    vocab = sorted(set(words))
    index = {w: i for i, w in enumerate(vocab)}
    ids = np.array([index[w] for w in words], dtype=np.int64)
    succ: list[list[int]] = [[] for _ in vocab]
    for a, b in zip(ids[:-1], ids[1:]):
        succ[a].append(int(b))
    succ[ids[-1]].append(int(ids[0]))  # wrap so the walk never dead-ends
    arrays = [np.array(s, dtype=np.int64) for s in succ]
    sentence_starts = np.unique(
        [ids[i + 1] for i in range(len(ids) - 1) if words[i].endswith((".", "!", "?"))]
    )
    return vocab, arrays, sentence_starts


_CHAIN = None


def _chain():
    global _CHAIN
    if _CHAIN is None:
        _CHAIN = _build_chain()
    return _CHAIN


def synth_words(n_words: int, rng: np.random.Generator) -> list[str]:
    """Random bigram walk starting at a sentence opener."""
    if n_words < 1:
        raise ConfigError(f"n_words must be >= 1, got {n_words}")
    vocab, arrays, starts = _chain()
    cur = int(starts[int(rng.integers(len(starts)))])
    out = [vocab[cur]]
    u = rng.random(1024)
    k = 0
    for _ in range(n_words - 1):
        if k == len(u):
            u = rng.random(1024)
            k = 0
        nxt_options = arrays[cur]
        cur = int(nxt_options[int(u[k] * len(nxt_options))])
        k += 1
        out.append(vocab[cur])
    return out


def synth_document(target_bytes: int, rng: np.random.Generator) -> bytes:
    """One document of roughly `target_bytes` UTF-8 bytes, ending on a word."""
    if target_bytes < 1:
        raise ConfigError(f"target_bytes must be >= 1, got {target_bytes}")
    words = synth_words(max(1, target_bytes // 5), rng)
    doc = " ".join(words)
    while len(doc.encode("utf-8")) < target_bytes:
        doc = doc + " " + " ".join(synth_words(max(1, target_bytes // 20), rng))
    return doc.encode("utf-8")


def synth_corpus(n_bytes: int, seed: int, doc_bytes: tuple[int, int] = (1500, 6000)) -> list[bytes]:
    """Documents totaling at least `n_bytes`, deterministic in `seed`."""
    if n_bytes < 1:
        raise ConfigError(f"n_bytes must be >= 1, got {n_bytes}")
    lo, hi = doc_bytes
    if not 1 <= lo <= hi:
        raise ConfigError(f"bad doc_bytes range {doc_bytes}")
    rng = np.random.Generator(np.random.Philox(seed))
    docs: list[bytes] = []
    total = 0
    while total < n_bytes:
        target = int(rng.integers(lo, hi + 1))
        doc = synth_document(min(target, max(lo, n_bytes - total)), rng)
        docs.append(doc)
        total += len(doc) + 1  # the BOS marker each document gains downstream
    return docs

"""
Corpus-level BLEU@1..4 with clipped n-gram counts and the closest-reference
brevity penalty, computed by sacrebleu on whitespace-joined tokens. Tokens
are compared as exact strings: sacrebleu runs without its own tokenizer,
lowercasing or smoothing.
"""
from dataclasses import dataclass
from typing import List, Sequence

from sacrebleu.metrics import BLEU


@dataclass
class EvalPair:
    candidate: Sequence[str]
    references: List[Sequence[str]]

    def __post_init__(self):
        if not self.references:
            raise ValueError('An evaluation pair needs at least one reference.')
        if not all(self.references):
            raise ValueError('References must hold at least one token.')


def _scorer(n):
    if n < 1:
        raise ValueError('n must be at least 1, got {}.'.format(n))
    return BLEU(tokenize='none', smooth_method='none', max_ngram_order=n, force=True)


def _streams(pairs):
    """ Reference streams for sacrebleu; pairs with fewer references are padded with None. """
    width = max(len(pair.references) for pair in pairs)
    return [[' '.join(pair.references[i]) if i < len(pair.references) else None
             for pair in pairs] for i in range(width)]


def corpus_score(pairs, n):
    pairs = list(pairs)
    if not pairs:
        raise ValueError('BLEU needs at least one candidate/reference pair.')
    hypotheses = [' '.join(pair.candidate) for pair in pairs]
    return _scorer(n).corpus_score(hypotheses, _streams(pairs))


def ngram_precision(pairs, n):
    """ Returns (clipped matches, candidate n-gram count) summed over the corpus. """
    result = corpus_score(pairs, n)
    return result.counts[n - 1], result.totals[n - 1]


def brevity_penalty(pairs):
    return corpus_score(pairs, 1).bp


def bleu(pairs, max_n=4):
    """ BLEU@1..max_n in [0, 1]; any zero precision zeroes the score. """
    pairs = list(pairs)
    return [corpus_score(pairs, n).score / 100.0 for n in range(1, max_n + 1)]


def token_accuracy(candidates, references):
    """ Position-wise token agreement over the longer of each pair. """
    correct = total = 0
    for candidate, reference in zip(candidates, references):
        length = max(len(candidate), len(reference))
        correct += sum(1 for a, b in zip(candidate, reference) if a == b)
        total += length
    return correct / total if total else 0.0

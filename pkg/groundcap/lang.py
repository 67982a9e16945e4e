"""
Caption vocabulary and sentence encoding.

Tokenisation is a plain whitespace split: case and attached punctuation
are kept exactly as written.
"""
import logging

log = logging.getLogger(__name__)

BOS, EOS, PAD, UNK = 0, 1, 2, 3
SPECIALS = ('<bos>', '<eos>', '<pad>', '<unk>')
MAX_LENGTH = 20


def tokenize(sentence):
    return sentence.split()


class Vocabulary:
    """ Bidirectional word <-> id map. Ids 0-3 are reserved for
        BOS, EOS, PAD and UNK; corpus words follow in order of first
        occurrence.
    """

    def __init__(self, words=()):
        self.words = list(SPECIALS)
        self._index = {word: i for i, word in enumerate(self.words)}
        for word in words:
            self.add(word)

    def add(self, word):
        if word not in self._index:
            self._index[word] = len(self.words)
            self.words.append(word)
        return self._index[word]

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.words == other.words

    def index(self, word):
        return self._index.get(word, UNK)

    def word(self, idx):
        if not 0 <= idx < len(self.words):
            raise ValueError('Token id {} is outside the vocabulary of size {}.'
                             .format(idx, len(self.words)))
        return self.words[idx]

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            for word in self.words:
                f.write(word + '\n')

    @classmethod
    def load(cls, path):
        with open(path, 'r', encoding='utf-8') as f:
            lines = [line.rstrip('\n') for line in f]
        if tuple(lines[:len(SPECIALS)]) != SPECIALS:
            raise ValueError('{}: vocabulary must start with {}.'.format(path, ', '.join(SPECIALS)))
        seen = set()
        for lineno, word in enumerate(lines, 1):
            if word in seen:
                raise ValueError('{}:{}: duplicate token {!r}.'.format(path, lineno, word))
            seen.add(word)
        return cls(lines[len(SPECIALS):])


def build_vocabulary(training_sentences):
    if not training_sentences:
        raise ValueError('Cannot build a vocabulary from an empty corpus.')
    vocab = Vocabulary()
    for sentence in training_sentences:
        for token in tokenize(sentence):
            vocab.add(token)
    log.info('Built vocabulary of %d tokens from %d sentences.',
             len(vocab), len(training_sentences))
    return vocab


def encode(sentence, vocab, max_length=MAX_LENGTH):
    ids = [vocab.index(token) for token in tokenize(sentence)][:max_length]
    return (BOS, *ids, EOS)


def decode(ids, vocab):
    words = [vocab.word(i) for i in ids]
    return ' '.join(word for i, word in zip(ids, words) if i not in (BOS, EOS, PAD))

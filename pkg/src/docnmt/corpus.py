"""Document corpora: parallel text IO, vocabularies, batching, synthetic data.

Corpus file format: one pre-tokenized sentence per line (space separated),
a blank line between documents; source and target files must align line by
line.  CRLF input is accepted; output is always LF with single spaces, so a
file written by this module round-trips bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError
from .tokens import RESERVED, SEP, UNK_ID

Sentence = list[str]
SentencePair = tuple[Sentence, Sentence]


@dataclass
class DocumentCorpus:
    documents: list[list[SentencePair]]
    doc_ids: list[str]

    def __post_init__(self):
        if len(self.documents) != len(self.doc_ids):
            raise ContractError("documents and doc_ids length mismatch")

    @property
    def n_documents(self) -> int:
        return len(self.documents)

    @property
    def n_sentences(self) -> int:
        return sum(len(d) for d in self.documents)

    def pairs(self):
        for doc in self.documents:
            yield from doc

    def side(self, which: str) -> list[list[Sentence]]:
        idx = 0 if which == "src" else 1
        return [[pair[idx] for pair in doc] for doc in self.documents]


def _read_lines(path) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as e:
        raise DataError(f"cannot read corpus file {path}: {e}") from e
    text = text.replace("\r\n", "\n")
    if text.endswith("\n"):
        text = text[:-1]
    return text.split("\n") if text else []


def load_corpus(src_path, tgt_path) -> DocumentCorpus:
    """Parse an aligned pair of document files; errors name 1-based lines."""
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise DataError(
            f"{src_path} has {len(src_lines)} lines but {tgt_path} has "
            f"{len(tgt_lines)}; first difference at line "
            f"{min(len(src_lines), len(tgt_lines)) + 1}")

    documents: list[list[SentencePair]] = []
    current: list[SentencePair] = []
    for i, (s, t) in enumerate(zip(src_lines, tgt_lines), start=1):
        s_blank = not s.strip()
        t_blank = not t.strip()
        if s_blank != t_blank:
            raise DataError(
                f"line {i}: document boundary mismatch (one side blank)")
        if s_blank:
            if not current:
                raise DataError(f"line {i}: empty document (consecutive blank lines)")
            documents.append(current)
            current = []
        else:
            current.append((s.split(), t.split()))
    if current:
        documents.append(current)
    if not documents:
        raise DataError(f"{src_path}: corpus is empty")
    ids = [f"doc{d:05d}" for d in range(len(documents))]
    return DocumentCorpus(documents=documents, doc_ids=ids)


def save_corpus(corpus: DocumentCorpus, src_path, tgt_path) -> None:
    for which, path in (("src", src_path), ("tgt", tgt_path)):
        docs = corpus.side(which)
        blocks = ["\n".join(" ".join(s) for s in doc) for doc in docs]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n\n".join(blocks) + "\n")


def load_documents(path) -> list[list[Sentence]]:
    """Parse a single-sided document file (same format, one side only)."""
    lines = _read_lines(path)
    documents: list[list[Sentence]] = []
    current: list[Sentence] = []
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            if not current:
                raise DataError(f"line {i}: empty document (consecutive blank lines)")
            documents.append(current)
            current = []
        else:
            current.append(line.split())
    if current:
        documents.append(current)
    if not documents:
        raise DataError(f"{path}: corpus is empty")
    return documents


def save_documents(documents: list[list[Sentence]], path) -> None:
    blocks = ["\n".join(" ".join(s) for s in doc) for doc in documents]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n\n".join(blocks) + "\n")


def write_manifest(corpus: DocumentCorpus, path) -> None:
    """doc_id TAB start_line TAB end_line (1-based, matching saved files)."""
    lines = []
    line = 1
    for doc_id, doc in zip(corpus.doc_ids, corpus.documents):
        end = line + len(doc) - 1
        lines.append(f"{doc_id}\t{line}\t{end}")
        line = end + 2  # the blank separator
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.id_to_token[:4] != list(RESERVED):
            raise ContractError("vocabulary must start with the reserved tokens")
        if not self.token_to_id:
            self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: Sentence) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> Sentence:
        return [self.id_to_token[i] for i in ids]

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id


def build_vocab(corpus: DocumentCorpus, side: str, max_size: int = 50000,
                min_freq: int = 1, include_sep: bool = False) -> Vocabulary:
    """Frequency-ordered vocabulary, ties broken lexicographically.

    Ids 0..3 are reserved (pad, unk, bos, eos); with ``include_sep`` the
    sentence separator takes id 4 before corpus tokens.
    """
    if side not in ("src", "tgt"):
        raise ContractError(f"side must be src or tgt, got {side!r}")
    if max_size < 5:
        raise DataError(f"max_size {max_size} leaves no room beyond reserved ids")
    counts: dict[str, int] = {}
    for doc in corpus.side(side):
        for sent in doc:
            for tok in sent:
                counts[tok] = counts.get(tok, 0) + 1
    for tok in counts:
        if tok in RESERVED or tok == SEP:
            raise DataError(f"corpus contains reserved token {tok!r}")
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    tokens = list(RESERVED)
    if include_sep:
        tokens.append(SEP)
    for tok, cnt in ordered:
        if cnt < min_freq or len(tokens) >= max_size:
            break
        tokens.append(tok)
    return Vocabulary(id_to_token=tokens)


def save_vocab_pair(path, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> None:
    payload = {"src": src_vocab.id_to_token, "tgt": tgt_vocab.id_to_token}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=0, sort_keys=True)
        fh.write("\n")


def load_vocab_pair(path) -> tuple[Vocabulary, Vocabulary]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return (Vocabulary(id_to_token=list(payload["src"])),
                Vocabulary(id_to_token=list(payload["tgt"])))
    except (OSError, KeyError, json.JSONDecodeError, ContractError) as e:
        raise DataError(f"cannot load vocabulary {path}: {e}") from e


# ---------------------------------------------------------------------------
# batching


@dataclass
class BatchItem:
    src_ids: list[int]
    tgt_ids: list[int]
    doc_start: bool
    doc_id: str


BATCH_MODES = ("sentence", "two-to-two", "document")


def make_batches(corpus: DocumentCorpus, src_vocab: Vocabulary,
                 tgt_vocab: Vocabulary, mode: str, max_tokens: int,
                 max_len: int, seed: int = 0
                 ) -> tuple[list[list[BatchItem]], int]:
    """Token-budgeted batches; returns (batches, truncated sentence count).

    * ``sentence``    — shuffled independent pairs.
    * ``two-to-two``  — previous and current sentence joined by the separator
                        token on both sides; the first sentence of each
                        document stays unconcatenated; shuffled.
    * ``document``    — documents shuffled, sentences kept in order with
                        ``doc_start`` marking boundaries.

    No batch exceeds ``max_tokens`` target tokens; sentences longer than
    ``max_len`` are truncated (counted in the second return value).
    """
    if mode not in BATCH_MODES:
        raise DataError(f"unknown batch mode {mode!r} (expected {BATCH_MODES})")
    if max_len < 1 or max_tokens < max_len:
        raise DataError(
            f"need max_tokens >= max_len >= 1, got {max_tokens}/{max_len}")

    truncated = 0

    def clip(ids: list[int]) -> list[int]:
        nonlocal truncated
        if len(ids) > max_len:
            truncated += 1
            return ids[:max_len]
        return ids

    items: list[BatchItem] = []
    if mode in ("sentence", "two-to-two"):
        sep_needed = mode == "two-to-two"
        if sep_needed and (SEP not in src_vocab or SEP not in tgt_vocab):
            raise DataError(
                "two-to-two mode needs the separator token in both "
                "vocabularies (build them with include_sep)")
        for doc_id, doc in zip(corpus.doc_ids, corpus.documents):
            prev: SentencePair | None = None
            for pair in doc:
                src, tgt = pair
                if sep_needed and prev is not None:
                    src = prev[0] + [SEP] + src
                    tgt = prev[1] + [SEP] + tgt
                items.append(BatchItem(src_ids=clip(src_vocab.encode(src)),
                                       tgt_ids=clip(tgt_vocab.encode(tgt)),
                                       doc_start=False, doc_id=doc_id))
                prev = pair
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(items))
        items = [items[i] for i in order]
    else:
        rng = np.random.default_rng(seed)
        doc_order = rng.permutation(corpus.n_documents)
        for d in doc_order:
            doc = corpus.documents[d]
            for s, pair in enumerate(doc):
                items.append(BatchItem(src_ids=clip(src_vocab.encode(pair[0])),
                                       tgt_ids=clip(tgt_vocab.encode(pair[1])),
                                       doc_start=(s == 0),
                                       doc_id=corpus.doc_ids[d]))

    batches: list[list[BatchItem]] = []
    cur: list[BatchItem] = []
    budget = 0
    for item in items:
        cost = len(item.tgt_ids)
        if cur and budget + cost > max_tokens:
            batches.append(cur)
            cur, budget = [], 0
        cur.append(item)
        budget += cost
    if cur:
        batches.append(cur)
    return batches, truncated


# ---------------------------------------------------------------------------
# synthetic cohesion corpus


@dataclass
class ConceptLexicon:
    """Concepts with two interchangeable target realizations each."""
    entries: list[tuple[str, str, str]]  # (source token, variant a, variant b)

    @property
    def pairs(self) -> list[tuple[str, str]]:
        return [(a, b) for _, a, b in self.entries]

    def to_json(self) -> str:
        payload = [{"source": s, "a": a, "b": b} for s, a, b in self.entries]
        return json.dumps({"concepts": payload}, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ConceptLexicon":
        try:
            payload = json.loads(text)
            entries = [(c["source"], c["a"], c["b"])
                       for c in payload["concepts"]]
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise DataError(f"bad lexicon file: {e}") from e
        return cls(entries=entries)


_CONCEPTS = [
    ("tokei", "watch", "clock"),
    ("nagaisu", "sofa", "couch"),
    ("kuruma", "car", "auto"),
    ("eiga", "movie", "film"),
    ("mise", "shop", "store"),
    ("kodomo", "kid", "child"),
    ("michi", "road", "street"),
    ("shashin", "photo", "picture"),
    ("enzetsu", "talk", "speech"),
    ("ie", "home", "house"),
]

# Sentence 1 introduces the entity with a register marker whose translation
# pins which synonym the document uses; later sentences carry no such signal,
# so only document context can keep them consistent.
_MARKERS = {"a": ("sensei", "sir"), "b": ("aibou", "buddy")}

_INTRO = ("{m} , kore wa {c} desu .", "{m} , this is a {v} .")

_FRAMES = [
    ("sono {c} wa ii desu .", "that {v} is good ."),
    ("watashi wa {c} ga suki desu .", "i like the {v} ."),
    ("kono {c} wa takai desu .", "this {v} is expensive ."),
    ("ano {c} o mimashita .", "i saw that {v} ."),
    ("sore wa subarashii {c} desu .", "it is a wonderful {v} ."),
    ("{c} wa koko ni arimasu .", "the {v} is here ."),
    ("sono {c} wa furui desu .", "that {v} is old ."),
]


def _concept_list(n_concepts: int) -> list[tuple[str, str, str]]:
    out = list(_CONCEPTS[:n_concepts])
    for k in range(len(out), n_concepts):
        out.append((f"mono{k}", f"thing{k}x", f"thing{k}y"))
    return out


def generate_synthetic_cohesion_corpus(n_docs: int, doc_len: int,
                                       n_concepts: int, seed: int
                                       ) -> tuple[DocumentCorpus, ConceptLexicon]:
    """Documents about one concept each, realized by one of two synonyms.

    Concept and synonym assignments are balanced before shuffling, so the
    marginal variant frequency is 50/50 and (for corpora of 200+ documents)
    every concept's variant ratio lands in [0.4, 0.6] — asserted below.
    Frame fillers translate deterministically; the only translation ambiguity
    is the synonym choice, which sentence 1 reveals through its marker.
    """
    if n_docs < 1 or doc_len < 1 or n_concepts < 1:
        raise DataError("n_docs, doc_len and n_concepts must be positive")
    rng = np.random.default_rng(seed)
    concepts = _concept_list(n_concepts)

    concept_of_doc = [d % n_concepts for d in range(n_docs)]
    rng.shuffle(concept_of_doc)
    variant_of_doc: list[str] = [""] * n_docs
    for k in range(n_concepts):
        members = [d for d, c in enumerate(concept_of_doc) if c == k]
        labels = ["a", "b"] * (len(members) // 2 + 1)
        labels = labels[:len(members)]
        rng.shuffle(labels)
        for d, lab in zip(members, labels):
            variant_of_doc[d] = lab

    documents = []
    for d in range(n_docs):
        src_c, var_a, var_b = concepts[concept_of_doc[d]]
        variant = var_a if variant_of_doc[d] == "a" else var_b
        m_src, m_tgt = _MARKERS[variant_of_doc[d]]
        doc = [(_INTRO[0].format(m=m_src, c=src_c).split(),
                _INTRO[1].format(m=m_tgt, v=variant).split())]
        n_follow = doc_len - 1
        if n_follow:
            replace = n_follow > len(_FRAMES)
            frame_idx = rng.choice(len(_FRAMES), size=n_follow, replace=replace)
            for fi in frame_idx:
                s, t = _FRAMES[int(fi)]
                doc.append((s.format(c=src_c).split(),
                            t.format(v=variant).split()))
        documents.append(doc)

    if n_docs >= 200:
        for k, (src_c, _, _) in enumerate(concepts):
            members = [d for d, c in enumerate(concept_of_doc) if c == k]
            if not members:
                continue
            ratio = sum(variant_of_doc[d] == "a" for d in members) / len(members)
            if not 0.4 <= ratio <= 0.6:
                raise DataError(
                    f"variant balance for concept '{src_c}' is {ratio:.2f}, "
                    f"outside [0.4, 0.6]")

    corpus = DocumentCorpus(documents=documents,
                            doc_ids=[f"synth{d:05d}" for d in range(n_docs)])
    return corpus, ConceptLexicon(entries=concepts)

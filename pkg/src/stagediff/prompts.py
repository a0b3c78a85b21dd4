"""Controlled prompt grammar: tokenizer, parser, and staged decomposition.

Grammar (token level, after normalization):

    prompt     := clause (" and " clause)*
    clause     := article? modifier* noun+ attachment*
                | "a" STYLE "style" noun+ "in" "a" STYLE "style" noun+
    attachment := ("with" | "wearing") article? modifier* noun+

Modifiers are adjectives listed in the bundled lexicon (colors, textures,
styles, plus a small "other" bucket); any token outside the lexicon and the
keyword set parses as a noun. Decomposition emits an ordered list of
sub-prompts that start from a fully stripped base prompt and reintroduce
attributes subject-by-subject (configs A/C) or one at a time (configs B/D
and accumulative mode).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from .errors import PromptParseError

ARTICLES = ("a", "an", "the")
ATTACH_KEYWORDS = ("with", "wearing")
CONFIGS = ("A", "B", "C", "D", "accumulative")


def _load_lexicon():
    path = resources.files("stagediff.data").joinpath("lexicon.json")
    table = json.loads(path.read_text("utf-8"))
    out = {}
    for category, words in table.items():
        for word in words:
            out[word] = category
    return out


MODIFIER_LEXICON = _load_lexicon()
STYLE_WORDS = frozenset(
    w for w, c in MODIFIER_LEXICON.items() if c == "style"
)


def tokenize(text: str):
    """Lowercase, punctuation-stripped, whitespace-split tokens.

    Intra-word hyphens survive ("oil-painting" is one token); articles are
    preserved. Raises PromptParseError on empty input.
    """
    if text is None or not text.strip():
        raise PromptParseError("empty prompt", index=-1)
    tokens = []
    for raw in text.lower().split():
        tok = "".join(ch for ch in raw if ch.isalnum() or ch == "-")
        tok = tok.strip("-")
        if tok:
            tokens.append(tok)
    if not tokens:
        raise PromptParseError("prompt contains no tokens", index=-1)
    return tokens


@dataclass
class Modifier:
    token: str
    category: str  # color | texture | style | other


@dataclass
class NounPhrase:
    article: str | None
    modifiers: list[Modifier]
    nouns: list[str]


@dataclass
class Attachment:
    keyword: str  # "with" or "wearing"
    phrase: NounPhrase


@dataclass
class Clause:
    head: NounPhrase
    attachments: list[Attachment] = field(default_factory=list)


@dataclass
class ScbClause:
    """Style-composition clause: a STYLE style SUBJECT in a STYLE style BG."""

    subject_style: str
    subject_nouns: list[str]
    background_style: str
    background_nouns: list[str]


@dataclass
class PromptTree:
    clauses: list  # Clause | ScbClause
    tokens: list[str]


class _Cursor:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def fail(self, message):
        raise PromptParseError(
            f"{message} at token {self.pos}"
            + (f" ({self.peek()!r})" if self.peek() is not None else ""),
            index=self.pos,
        )


def _is_boundary(tok):
    return tok is None or tok == "and" or tok in ATTACH_KEYWORDS or tok == "in"


def _parse_nouns(cur):
    nouns = []
    while True:
        tok = cur.peek()
        if _is_boundary(tok) or tok in ARTICLES or tok in MODIFIER_LEXICON:
            break
        nouns.append(cur.take())
    if not nouns:
        cur.fail("expected a noun")
    return nouns


def _parse_noun_phrase(cur):
    article = cur.take() if cur.peek() in ARTICLES else None
    modifiers = []
    while cur.peek() in MODIFIER_LEXICON:
        tok = cur.take()
        modifiers.append(Modifier(tok, MODIFIER_LEXICON[tok]))
    nouns = _parse_nouns(cur)
    return NounPhrase(article, modifiers, nouns)


def _try_parse_scb(cur):
    """Attempt the SCB clause form; returns None (no consumption) on miss."""
    start = cur.pos
    toks = cur.tokens

    def grab_styled_nouns(i, stop):
        if i >= len(toks) or toks[i] != "a":
            return None
        i += 1
        if i + 1 >= len(toks) or toks[i + 1] != "style":
            return None
        style = toks[i]
        i += 2
        nouns = []
        while i < len(toks) and toks[i] != stop and toks[i] != "and":
            if toks[i] in ("in", "style"):
                return None
            nouns.append(toks[i])
            i += 1
        if not nouns:
            return None
        return style, nouns, i

    first = grab_styled_nouns(start, "in")
    if first is None:
        return None
    s1, subject, i = first
    if i >= len(toks) or toks[i] != "in":
        return None
    second = grab_styled_nouns(i + 1, None)
    if second is None:
        return None
    s2, background, i = second
    cur.pos = i
    return ScbClause(s1, subject, s2, background)


def _parse_clause(cur):
    scb = _try_parse_scb(cur)
    if scb is not None:
        return scb
    head = _parse_noun_phrase(cur)
    attachments = []
    while cur.peek() in ATTACH_KEYWORDS:
        keyword = cur.take()
        attachments.append(Attachment(keyword, _parse_noun_phrase(cur)))
    return Clause(head, attachments)


def parse(tokens) -> PromptTree:
    """Parse a token list into a PromptTree; errors name the token index."""
    cur = _Cursor(list(tokens))
    if not cur.tokens:
        raise PromptParseError("empty token list", index=-1)
    clauses = [_parse_clause(cur)]
    while cur.peek() == "and":
        cur.take()
        clauses.append(_parse_clause(cur))
    if cur.peek() is not None:
        cur.fail("unexpected token")
    return PromptTree(clauses, cur.tokens)


# --- attribute enumeration and staged rendering --------------------------


@dataclass
class _Attr:
    attr_id: int
    subject_key: tuple
    subject_text: str


def _enumerate_attrs(tree):
    """List attributes in appearance order plus the subject each binds to.

    An attachment whose noun phrase carries its own modifiers contributes a
    subject of its own (the bare attachment stays in the base prompt); a
    modifier-less attachment is itself one attribute of the clause head.
    """
    attrs = []
    subjects = []  # (key, text) in appearance order
    seen = set()

    def add_subject(key, text):
        if key not in seen:
            seen.add(key)
            subjects.append((key, text))

    next_id = 0
    for ci, clause in enumerate(tree.clauses):
        if isinstance(clause, ScbClause):
            for site, nouns in (
                ("scb_subject", clause.subject_nouns),
                ("scb_background", clause.background_nouns),
            ):
                key = (ci, site)
                add_subject(key, " ".join(nouns))
                attrs.append(_Attr(next_id, key, " ".join(nouns)))
                next_id += 1
            continue
        head_key = (ci, "head")
        head_text = " ".join(clause.head.nouns)
        for _ in clause.head.modifiers:
            add_subject(head_key, head_text)
            attrs.append(_Attr(next_id, head_key, head_text))
            next_id += 1
        for ai, att in enumerate(clause.attachments):
            if att.phrase.modifiers:
                key = (ci, "att", ai)
                text = " ".join(att.phrase.nouns)
                for _ in att.phrase.modifiers:
                    add_subject(key, text)
                    attrs.append(_Attr(next_id, key, text))
                    next_id += 1
            else:
                add_subject(head_key, head_text)
                attrs.append(_Attr(next_id, head_key, head_text))
                next_id += 1
    return attrs, subjects


def _render(tree, included):
    """Render tokens keeping only attributes whose id is in `included`.

    Returns (tokens, spans) where spans maps subject key -> (start, end)
    token range of that subject's nouns.
    """
    tokens = []
    spans = {}

    def emit_nouns(key, nouns):
        spans[key] = (len(tokens), len(tokens) + len(nouns))
        tokens.extend(nouns)

    next_id = 0

    def take_id():
        nonlocal next_id
        i = next_id
        next_id += 1
        return i

    for ci, clause in enumerate(tree.clauses):
        if ci > 0:
            tokens.append("and")
        if isinstance(clause, ScbClause):
            tokens.append("a")
            if take_id() in included:
                tokens.extend([clause.subject_style, "style"])
            emit_nouns((ci, "scb_subject"), clause.subject_nouns)
            tokens.extend(["in", "a"])
            if take_id() in included:
                tokens.extend([clause.background_style, "style"])
            emit_nouns((ci, "scb_background"), clause.background_nouns)
            continue
        if clause.head.article:
            tokens.append(clause.head.article)
        for mod in clause.head.modifiers:
            if take_id() in included:
                tokens.append(mod.token)
        emit_nouns((ci, "head"), clause.head.nouns)
        for ai, att in enumerate(clause.attachments):
            if att.phrase.modifiers:
                tokens.append(att.keyword)
                if att.phrase.article:
                    tokens.append(att.phrase.article)
                for mod in att.phrase.modifiers:
                    if take_id() in included:
                        tokens.append(mod.token)
                emit_nouns((ci, "att", ai), att.phrase.nouns)
            else:
                keep = take_id() in included
                if keep:
                    tokens.append(att.keyword)
                    if att.phrase.article:
                        tokens.append(att.phrase.article)
                    emit_nouns((ci, "att", ai), att.phrase.nouns)
    return tokens, spans


def render(tree) -> str:
    """Full rendering; round-trips the parsed token sequence."""
    attrs, _ = _enumerate_attrs(tree)
    tokens, _ = _render(tree, {a.attr_id for a in attrs})
    return " ".join(tokens)


@dataclass
class PromptPlan:
    """Ordered sub-prompt sequence with per-branch subject locations.

    ``labels[k]`` is the p-index of ``sub_prompts[k]`` (0-based original,
    1 the stripped base); configs C/D and accumulative omit p_0.
    ``subjects[i]`` / ``subject_spans[i]`` describe branch i+1's subject
    (span indices into the tokenization of that sub-prompt), and
    ``first_branch_spans[i]`` locates the same subject inside the first
    listed sub-prompt (used when masks are sourced from the layout branch).
    """

    original: str
    config: str
    sub_prompts: list[str]
    labels: list[int]
    subjects: list[str]
    subject_spans: list[tuple]
    first_branch_spans: list[tuple]
    base_index: int

    @property
    def n_branches(self):
        return len(self.sub_prompts)


def decompose(tree: PromptTree, config: str = "B") -> PromptPlan:
    """Build the staged sub-prompt plan for one of the five configurations."""
    if config not in CONFIGS:
        raise PromptParseError(f"unknown decomposition config {config!r}")
    attrs, subjects = _enumerate_attrs(tree)
    all_ids = {a.attr_id for a in attrs}
    full_tokens, full_spans = _render(tree, all_ids)
    original = " ".join(full_tokens)

    if not attrs:
        return PromptPlan(
            original=original,
            config=config,
            sub_prompts=[original],
            labels=[0],
            subjects=[],
            subject_spans=[],
            first_branch_spans=[],
            base_index=0,
        )

    base_tokens, base_spans = _render(tree, set())
    base = " ".join(base_tokens)

    # Attributes grouped per subject, appearance order within each group.
    grouped = []
    for key, _text in subjects:
        grouped.extend(a for a in attrs if a.subject_key == key)

    # Each detail branch: (included attr ids, subject attr).
    if config in ("A", "C"):
        branches = []
        for key, text in subjects:
            ids = {a.attr_id for a in attrs if a.subject_key == key}
            branches.append((ids, key, text))
    elif config in ("B", "D"):
        branches = [({a.attr_id}, a.subject_key, a.subject_text) for a in grouped]
    else:  # accumulative
        branches = []
        acc = set()
        for a in grouped:
            acc = acc | {a.attr_id}
            branches.append((set(acc), a.subject_key, a.subject_text))

    include_p0 = config in ("A", "B")
    sub_prompts = []
    labels = []
    if include_p0:
        sub_prompts.append(original)
        labels.append(0)
    sub_prompts.append(base)
    labels.append(1)

    subject_texts = []
    spans = []
    for ids, key, text in branches:
        toks, branch_spans = _render(tree, ids)
        sub_prompts.append(" ".join(toks))
        labels.append(labels[-1] + 1)
        subject_texts.append(text)
        spans.append(branch_spans[key])

    first_spans = full_spans if include_p0 else base_spans
    first_branch_spans = [first_spans[key] for _, key, _t in branches]

    return PromptPlan(
        original=original,
        config=config,
        sub_prompts=sub_prompts,
        labels=labels,
        subjects=subject_texts,
        subject_spans=spans,
        first_branch_spans=first_branch_spans,
        base_index=1 if include_p0 else 0,
    )


def subject_span(plan: PromptPlan, branch: int):
    """Token range of subject q_branch inside sub-prompt p_{branch+1}."""
    if branch < 1 or branch > len(plan.subjects):
        raise IndexError(f"branch {branch} out of range")
    return plan.subject_spans[branch - 1]


def plan_from_text(text: str, config: str = "B") -> PromptPlan:
    return decompose(parse(tokenize(text)), config)

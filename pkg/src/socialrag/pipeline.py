"""Two-layer query-focused summarization over retrieved posts.

Layer 1 summarizes every budget-sized segment of every retrieved post against
the query; summaries that report no answer are dropped. Layer 2 synthesizes the
surviving summaries into one answer, aggregating in rounds when they do not
fit into a single prompt.
"""

from __future__ import annotations

import json
import logging
import re
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

from .index import DEFAULT_K, Index, RetrievalResult
from .llm import Backend, GenerationRequest, LLMError

logger = logging.getLogger(__name__)

DEFAULT_SENTINEL = "NO ANSWER FOUND"

_PLACEHOLDER_RE = re.compile(r"(\{query\}|\{content\}|\{sentinel\})")
_WORD_END_RE = re.compile(r"[.!?]+[\"')\]]*$")


class TemplateError(ValueError):
    pass


class BudgetOverflowError(ValueError):
    pass


class PipelineError(Exception):
    """A backend failed mid-run. ``bundle`` holds whatever was produced before the failure."""

    def __init__(self, message: str, bundle: "AnswerBundle"):
        super().__init__(message)
        self.bundle = bundle


def estimate_tokens(text: str) -> int:
    """Default budget estimator: whitespace-separated words."""
    return len(text.split())


@dataclass(frozen=True)
class Segment:
    doc_id: str
    seg_index: int
    text: str
    token_estimate: int

    def to_dict(self) -> dict:
        return asdict(self)


def _sentences(words: list[str]) -> list[list[str]]:
    sentences, current = [], []
    for w in words:
        current.append(w)
        if _WORD_END_RE.search(w):
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


def split_words(text: str, budget: int) -> list[list[str]]:
    if budget < 1:
        raise ValueError(f"segment budget must be >= 1, got {budget}")
    words = text.split()
    if not words:
        raise ValueError("cannot segment empty text")

    chunks: list[list[str]] = []
    current: list[str] = []
    for sentence in _sentences(words):
        if len(current) + len(sentence) <= budget:
            current.extend(sentence)
            continue
        if current:
            chunks.append(current)
            current = []
        while len(sentence) > budget:
            chunks.append(sentence[:budget])
            sentence = sentence[budget:]
        current = list(sentence)
    if current:
        chunks.append(current)
    return chunks


def segment_post(text: str, budget: int, doc_id: str = "") -> list[Segment]:
    """Greedily pack whole sentences into segments of at most ``budget`` words.

    A sentence longer than the budget is cut at word boundaries. Whitespace is
    normalized to single spaces; the word sequence is otherwise unchanged.
    """
    return [
        Segment(doc_id, i, " ".join(chunk), len(chunk))
        for i, chunk in enumerate(split_words(text, budget))
    ]


@dataclass(frozen=True)
class PromptTemplate:
    layer: str
    text: str

    def __post_init__(self):
        if self.layer not in ("one", "two"):
            raise TemplateError(f"layer must be 'one' or 'two', got {self.layer!r}")
        for name in ("query", "content"):
            count = self.text.count("{" + name + "}")
            if count != 1:
                raise TemplateError(f"layer {self.layer} template must contain {{{name}}} exactly once (found {count})")

    def _parts(self, query: str, sentinel: str) -> tuple[str, str]:
        """Template text before and after ``{content}``, other placeholders filled."""
        values = {"{query}": query, "{sentinel}": sentinel}
        before, after, seen = [], [], False
        for piece in _PLACEHOLDER_RE.split(self.text):
            if piece == "{content}":
                seen = True
                continue
            (after if seen else before).append(values.get(piece, piece))
        return "".join(before), "".join(after)

    def render(self, query: str, content: str, sentinel: str = DEFAULT_SENTINEL) -> str:
        before, after = self._parts(query, sentinel)
        return before + content + after

    def overhead(self, query: str, sentinel: str = DEFAULT_SENTINEL) -> int:
        """Upper bound on the words the template adds around any content."""
        before, after = self._parts(query, sentinel)
        return estimate_tokens(before) + estimate_tokens(after)


def render_prompt(
    template: PromptTemplate,
    query: str,
    content: str,
    budget: int,
    sentinel: str = DEFAULT_SENTINEL,
) -> str:
    prompt = template.render(query, content, sentinel)
    size = estimate_tokens(prompt)
    if size > budget:
        raise BudgetOverflowError(f"prompt is {size} tokens, budget is {budget}")
    return prompt


def _normalize(text: str) -> str:
    return text.strip(string.whitespace + string.punctuation).casefold()


def detect_no_answer(summary_text: str, sentinel: str = DEFAULT_SENTINEL) -> bool:
    return _normalize(summary_text).startswith(_normalize(sentinel))


@dataclass(frozen=True)
class Templates:
    layer1: PromptTemplate
    layer2: PromptTemplate


def load_templates(directory: Optional[Path | str] = None) -> Templates:
    """Read ``layer1.txt`` and ``layer2.txt`` from ``directory`` or the packaged defaults."""
    if directory is None:
        base = resources.files("socialrag") / "data"
        texts = [(base / name).read_text(encoding="utf-8") for name in ("layer1.txt", "layer2.txt")]
    else:
        directory = Path(directory)
        texts = [(directory / name).read_text(encoding="utf-8") for name in ("layer1.txt", "layer2.txt")]
    return Templates(PromptTemplate("one", texts[0]), PromptTemplate("two", texts[1]))


@dataclass(frozen=True)
class PipelineConfig:
    k: int = DEFAULT_K
    segment_budget: int = 512
    layer2_budget: int = 2048
    no_answer_sentinel: str = DEFAULT_SENTINEL
    max_parallel: int = 4
    model_id: str = "default"
    temperature: float = 0.0
    layer1_max_tokens: int = 256
    layer2_max_tokens: int = 512

    def __post_init__(self):
        for name in ("k", "segment_budget", "layer2_budget", "max_parallel", "layer1_max_tokens", "layer2_max_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.no_answer_sentinel.strip():
            raise ValueError("no_answer_sentinel must be nonempty")


@dataclass
class LayerOneSummary:
    doc_id: str
    seg_index: int
    rank: int
    text: str
    no_answer: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AnswerBundle:
    query: str
    status: str = "no_information"
    final_summary: str = ""
    retrieval: list[RetrievalResult] = field(default_factory=list)
    segments: list[Segment] = field(default_factory=list)
    layer1: list[LayerOneSummary] = field(default_factory=list)
    aggregation: list[dict] = field(default_factory=list)
    accounting: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "query": self.query,
            "status": self.status,
            "final_summary": self.final_summary,
            "retrieval": [r.to_dict() for r in self.retrieval],
            "segments": [s.to_dict() for s in self.segments],
            "layer1": [s.to_dict() for s in self.layer1],
            "aggregation": self.aggregation,
            "accounting": self.accounting,
            "config": self.config,
        }
        if include_timing:
            d["timing"] = self.timing
        return d

    def to_json(self, include_timing: bool = True, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(include_timing), ensure_ascii=False, indent=indent, sort_keys=True)


class _Run:
    """Mutable state of one :func:`answer_query` call."""

    def __init__(self, backend: Backend, config: PipelineConfig, bundle: AnswerBundle, pool: ThreadPoolExecutor):
        self.backend = backend
        self.config = config
        self.bundle = bundle
        self.pool = pool
        self.counts = {"layer1_calls": 0, "layer2_calls": 0, "prompt_tokens": 0, "completion_tokens": 0}
        self.usage = [0, 0]
        self.usage_reported = False
        self.partial: list = []

    def call_all(self, prompts: Sequence[str], max_tokens: int) -> list[str]:
        """Generate for every prompt concurrently; results in prompt order."""
        cfg = self.config

        def one(prompt: str):
            request = GenerationRequest.single(
                cfg.model_id, prompt, temperature=cfg.temperature, max_tokens=max_tokens
            )
            return self.backend.generate(request)

        futures = [self.pool.submit(one, p) for p in prompts]
        outputs: list = []
        error: Optional[BaseException] = None
        for prompt, fut in zip(prompts, futures):
            try:
                response = fut.result()
            except LLMError as e:
                error = error or e
                outputs.append(None)
                continue
            text = (response.content or "").strip() if response.finish_reason != "error" else ""
            self.counts["prompt_tokens"] += estimate_tokens(prompt)
            self.counts["completion_tokens"] += estimate_tokens(text)
            if response.usage is not None:
                self.usage_reported = True
                self.usage[0] += response.usage[0]
                self.usage[1] += response.usage[1]
            outputs.append(text)
        if error is not None:
            self.partial = outputs
            raise error
        return outputs

    def accounting(self) -> dict:
        acc = dict(self.counts)
        acc["backend_usage"] = (
            {"prompt_tokens": self.usage[0], "completion_tokens": self.usage[1]} if self.usage_reported else None
        )
        return acc


def _truncate_words(text: str, limit: int) -> str:
    words = text.split()
    return text if len(words) <= limit else " ".join(words[:limit])


def _aggregate(run: _Run, template: PromptTemplate, query: str, items: list[tuple[str, str]]) -> str:
    """Reduce ``(id, text)`` summaries to one final text through layer-2 calls.

    Each item is capped at half the available content budget so that any two
    fit together; every round therefore merges at least two items.
    """
    cfg = run.config
    capacity = cfg.layer2_budget - template.overhead(query, cfg.no_answer_sentinel)
    if capacity < 2:
        raise BudgetOverflowError(
            f"layer2_budget {cfg.layer2_budget} leaves no room for summaries after the prompt overhead"
        )
    per_item = capacity // 2
    round_no = 0
    while True:
        items = [(item_id, _truncate_words(text, per_item)) for item_id, text in items]
        total = sum(estimate_tokens(text) for _, text in items)
        if total <= capacity:
            prompt = render_prompt(template, query, "\n\n".join(t for _, t in items), cfg.layer2_budget, cfg.no_answer_sentinel)
            run.counts["layer2_calls"] += 1
            [final] = run.call_all([prompt], cfg.layer2_max_tokens)
            run.bundle.aggregation.append({"round": round_no, "final": True, "batches": [{"inputs": [i for i, _ in items], "output": "final"}]})
            return final

        batches: list[list[tuple[str, str]]] = []
        current: list[tuple[str, str]] = []
        used = 0
        for item in items:
            size = estimate_tokens(item[1])
            if current and used + size > capacity:
                batches.append(current)
                current, used = [], 0
            current.append(item)
            used += size
        batches.append(current)

        merge = [b for b in batches if len(b) > 1]
        prompts = [
            render_prompt(template, query, "\n\n".join(t for _, t in b), cfg.layer2_budget, cfg.no_answer_sentinel)
            for b in merge
        ]
        run.counts["layer2_calls"] += len(prompts)
        outputs = iter(run.call_all(prompts, cfg.layer2_max_tokens))

        next_items, record = [], []
        for b_no, batch in enumerate(batches):
            if len(batch) == 1:
                # a lone trailing item is carried into the next round unchanged
                next_items.append(batch[0])
                record.append({"inputs": [batch[0][0]], "output": batch[0][0]})
                continue
            out_id = f"l2-r{round_no}-b{b_no}"
            next_items.append((out_id, next(outputs)))
            record.append({"inputs": [i for i, _ in batch], "output": out_id})
        run.bundle.aggregation.append({"round": round_no, "final": False, "batches": record})
        assert len(next_items) < len(items)
        items = next_items
        round_no += 1


def answer_query(
    index: Index,
    backend: Backend,
    config: PipelineConfig = PipelineConfig(),
    templates: Optional[Templates] = None,
    query: str = "",
    time_range: Optional[tuple[int, int]] = None,
    clock: Callable[[], float] = time.perf_counter,
) -> AnswerBundle:
    templates = templates or load_templates()
    sentinel = config.no_answer_sentinel
    if sentinel not in templates.layer1.render(query, "", sentinel):
        raise TemplateError("the layer 1 template must tell the model to reply with the no-answer sentinel")

    snapshot = asdict(config)
    snapshot["time_range"] = list(time_range) if time_range else None
    bundle = AnswerBundle(query=query, config=snapshot)
    started = clock()

    bundle.retrieval = index.search(query, config.k, time_range)
    bundle.timing["retrieval_s"] = clock() - started
    if not bundle.retrieval:
        bundle.accounting = {"layer1_calls": 0, "layer2_calls": 0, "prompt_tokens": 0, "completion_tokens": 0, "backend_usage": None}
        bundle.timing["total_s"] = clock() - started
        return bundle

    l1 = templates.layer1
    content_budget = config.segment_budget - l1.overhead(query, sentinel)
    if content_budget < 1:
        raise BudgetOverflowError(
            f"segment_budget {config.segment_budget} does not exceed the layer 1 prompt overhead"
        )
    for result in bundle.retrieval:
        post = index.document(result.doc_id)
        bundle.segments.extend(segment_post(post.text, content_budget, post.id))
    rank_of = {r.doc_id: r.rank for r in bundle.retrieval}

    with ThreadPoolExecutor(max_workers=config.max_parallel) as pool:
        run = _Run(backend, config, bundle, pool)
        try:
            t0 = clock()
            prompts = [render_prompt(l1, query, seg.text, config.segment_budget, sentinel) for seg in bundle.segments]
            run.counts["layer1_calls"] = len(prompts)
            outputs = run.call_all(prompts, config.layer1_max_tokens)
            for seg, text in zip(bundle.segments, outputs):
                no_answer = not text or detect_no_answer(text, sentinel)
                bundle.layer1.append(LayerOneSummary(seg.doc_id, seg.seg_index, rank_of[seg.doc_id], text, no_answer))
            bundle.timing["layer1_s"] = clock() - t0

            survivors = [(f"l1-{i}", s.text) for i, s in enumerate(bundle.layer1) if not s.no_answer]
            if survivors:
                t0 = clock()
                bundle.final_summary = _aggregate(run, templates.layer2, query, survivors)
                bundle.status = "answered" if bundle.final_summary else "no_information"
                bundle.timing["layer2_s"] = clock() - t0
        except LLMError as e:
            if not bundle.layer1:
                for seg, text in zip(bundle.segments, run.partial):
                    if text is not None:
                        bundle.layer1.append(
                            LayerOneSummary(seg.doc_id, seg.seg_index, rank_of[seg.doc_id], text, not text or detect_no_answer(text, sentinel))
                        )
            bundle.accounting = run.accounting()
            raise PipelineError(f"backend failure: {e}", bundle) from e

    bundle.accounting = run.accounting()
    bundle.timing["total_s"] = clock() - started
    return bundle

"""Offline stand-ins for model endpoints.

``SyntheticResponder`` recognises the ``Task:`` header of each bundled prompt
template and answers in the expected format with content derived from the
prompt itself, so whole runs are deterministic without any network access.
Customised templates that drop the header need explicit ``MockRule`` scripts.
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Any, Mapping

from .gateway import GatewayRequest, MockBackend, MockRule
from .textmetrics import rouge1, tokenize

_STOP = {
    "the", "a", "an", "and", "or", "of", "to", "in", "on", "for", "with", "by", "is", "are",
    "what", "which", "does", "do", "how", "this", "that", "as", "at", "be", "from", "its",
}


def _digest(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def _section(text: str, tag: str) -> str:
    m = re.search(rf"<{tag}>\s*(.*?)\s*</{tag}>", text, re.DOTALL)
    return m.group(1).strip() if m else ""


def _content_words(text: str, limit: int) -> list[str]:
    words = []
    for tok in tokenize(text):
        if tok in _STOP or tok.isdigit() or tok in words:
            continue
        words.append(tok)
        if len(words) == limit:
            break
    return words or ["tissue"]


def _count(text: str, default: int = 3) -> int:
    m = re.search(r"exactly (\d+)", text)
    return int(m.group(1)) if m else default


class SyntheticResponder:
    """Callable ``(request, match) -> str`` usable as a catch-all MockRule response."""

    def __call__(self, req: GatewayRequest, match: Any = None) -> str:
        text = req.prompt_text()
        m = re.search(r"Task: ([a-z -]+)", text)
        task = m.group(1).strip() if m else ""
        handler = getattr(self, "_" + task.replace(" ", "_").replace("-", "_"), None)
        if handler is None:
            return "OK"
        return handler(text)

    def _image_summarization(self, text: str) -> str:
        words = _content_words(_section(text, "goal"), 6)
        return json.dumps(
            {
                "features": "Sheets of atypical cells with " + ", ".join(words[:3]) + " visible across the section.",
                "keywords": words[:4],
            }
        )

    def _root_question_generation(self, text: str) -> str:
        words = _content_words(_section(text, "goal"), 8)
        n = _count(text)
        questions = [
            f"What does the image show about {words[i % len(words)]} (aspect {i + 1})?" for i in range(n)
        ]
        return json.dumps({"questions": questions})

    def _image_analysis(self, text: str) -> str:
        question = _section(text, "question")
        words = _content_words(question, 4)
        return f"Findings related to {' '.join(words)}: cohesive nests of tumour cells with moderate atypia."

    def _answer_and_insight_generation(self, text: str) -> str:
        question = _section(text, "question")
        words = _content_words(question, 5)
        tag = _digest(question) % 97
        return json.dumps(
            {
                "answer": f"The {' '.join(words[:3])} findings are consistent with carcinoma (ref {tag}).",
                "insight": f"Observed {' '.join(words)} suggests invasive carcinoma with prognostic relevance.",
            }
        )

    def _follow_up_question_generation(self, text: str) -> str:
        question = _section(text, "question")
        words = _content_words(question, 6)
        n = _count(text)
        depth_tag = _digest(question) % 1000
        cands = [
            f"How does {words[(i + 1) % len(words)]} relate to {words[i % len(words)]} (follow-up {depth_tag}.{i + 1})?"
            for i in range(n)
        ]
        return json.dumps({"questions": cands})

    def _follow_up_question_scoring(self, text: str) -> str:
        return str(1 + _digest(_section(text, "followup_questions")) % 10)

    def _direct_insight_generation(self, text: str) -> str:
        words = _content_words(_section(text, "goal"), 10)
        items = [
            {"question": f"Is {w} present?", "insight": f"The image suggests {w} is relevant to the prognosis."}
            for w in words[:5]
        ]
        return json.dumps({"insights": items})

    def _insight_similarity_scoring(self, text: str) -> str:
        ref = _section(text, "reference")
        gen = _section(text, "candidate")
        return str(1 + round(9 * min(1.0, 3 * rouge1(ref, gen))))

    def _novel_insight_verification(self, text: str) -> str:
        vote = _digest(_section(text, "insight")) % 2
        return f"The insight was checked against the image and the known findings.\nVerdict: {vote}"

    def _case_quality_assessment(self, text: str) -> str:
        return json.dumps({"correctness": True, "rationality": True, "coherence": True})


def synthetic_backend(model_id: str | None = None) -> MockBackend:
    return MockBackend(default=SyntheticResponder(), model_id=model_id)


def mock_from_config(spec: Mapping[str, Any], name: str) -> MockBackend:
    """Build a mock endpoint from its JSON config block.

    ``{"responder": "synthetic"}`` uses SyntheticResponder; otherwise
    ``{"rules": [{"match": regex, "response": str | [str, ...]}], "default": str}``.
    Rules are tried before the synthetic fallback when both are given.
    """
    rules = [MockRule(r["match"], r["response"]) for r in spec.get("rules", [])]
    default: Any = spec.get("default")
    responder = spec.get("responder")
    if responder == "synthetic":
        default = SyntheticResponder()
    elif responder is not None:
        raise ValueError(f"endpoint {name!r}: unknown mock responder {responder!r}")
    if not rules and default is None:
        raise ValueError(f"endpoint {name!r}: mock needs rules, a default, or a responder")
    return MockBackend(rules, default=default, model_id=spec.get("model"))

"""Zero-shot evaluation over generation, classification, and multiple-choice
tasks, with per-language reports shaped as one row of language columns plus
their arithmetic mean.

Models are anything exposing encode(text) -> ids, decode(ids) -> text,
logits(ids) -> [len(ids), vocab] plus eos_id/max_seq_len attributes;
TransformerLM adapts a trained checkpoint and tokenizer to that protocol,
and test stubs implement it directly.

No in-context examples are ever inserted: prompts are rendered from the
instruction templates (mode `multiple` samples one of the four variants per
example through a seeded generator) and the model's continuation or
choice log-likelihoods are scored. Classification scores the translated
label verbalizers by log-likelihood rather than free generation.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field

import numpy as np

from . import instruct, metrics, tokenizer as tok
from .errors import (ConfigInvalid, ContextTooLong, CorpusMismatch,
                     TemplateMissing)
from .model import ParamStore, TokenBatch, forward

KINDS = ("generation", "classification", "multiple_choice")
KIND_METRICS = {"generation": ("bleu",),
                "classification": ("macro_f1", "accuracy"),
                "multiple_choice": ("accuracy", "accuracy_norm", "macro_f1")}
# column order used by the report tables
LANGUAGE_ORDER = ("swa", "hau", "yor", "xho", "zul")


@dataclass
class EvalTask:
    kind: str
    task: str  # template task name: mt, sentiment, topic, ...
    prompt_mode: str = "native"
    direction: str | None = None  # mt: to_eng / from_eng

    def validate(self) -> "EvalTask":
        if self.kind not in KINDS:
            raise ConfigInvalid(f"unknown task kind {self.kind!r}")
        if self.prompt_mode not in instruct.MODES:
            raise ConfigInvalid(f"unknown prompt mode {self.prompt_mode!r}")
        if (self.kind == "generation" and self.task == "mt"
                and self.prompt_mode == "multiple" and not self.direction):
            raise ConfigInvalid(
                "mt evaluation in multiple mode needs direction to_eng/from_eng")
        return self

    @property
    def metrics(self) -> tuple[str, ...]:
        return KIND_METRICS[self.kind]


@dataclass
class GenerationParams:
    max_new_tokens: int = 32
    stop_sequences: tuple[str, ...] = ("\n",)

    def validate(self) -> "GenerationParams":
        if self.max_new_tokens < 1:
            raise ConfigInvalid("max_new_tokens must be >= 1")
        return self


class TransformerLM:
    """Checkpoint + tokenizer behind the harness model protocol."""

    def __init__(self, params: ParamStore, tokenizer_model: tok.TokenizerModel,
                 tile_size: int = 64):
        if params.config.vocab_size < tokenizer_model.vocab_size:
            raise ConfigInvalid(
                f"model vocab {params.config.vocab_size} smaller than "
                f"tokenizer vocab {tokenizer_model.vocab_size}")
        self.params = params
        self.tokenizer = tokenizer_model
        self.tile_size = tile_size
        self.eos_id = tok.EOS_ID
        self.bos_id = tok.BOS_ID
        self.max_seq_len = params.config.max_seq_len

    def encode(self, text: str) -> list[int]:
        return tok.encode(self.tokenizer, text)

    def decode(self, ids) -> str:
        return tok.decode(self.tokenizer, ids)

    def logits(self, ids) -> np.ndarray:
        batch = TokenBatch(np.asarray([ids], dtype=np.int64))
        return forward(self.params, batch, tile_size=self.tile_size)[0]


def render_prompt(task: EvalTask, example, rng: random.Random | None = None) -> str:
    """Prompt for one example per the task's mode; example needs language
    and inputs fields (attributes or keys)."""
    get = (example.get if isinstance(example, dict)
           else lambda k, d=None: getattr(example, k, d))
    language = get("language")
    template = instruct.pick_template(task.task, language, task.prompt_mode,
                                      task.direction, rng)
    return instruct.render(template, {"inputs": get("inputs")})


def _prompt_ids(model, prompt: str) -> list[int]:
    ids = model.encode(prompt)
    if hasattr(model, "bos_id"):
        ids = [model.bos_id] + ids
    return ids


def generate(model, prompt: str, params: GenerationParams) -> str:
    """Greedy argmax continuation, truncated at eos or a stop sequence."""
    params.validate()
    ids = _prompt_ids(model, prompt)
    if len(ids) + params.max_new_tokens > model.max_seq_len:
        raise ContextTooLong(
            f"prompt ({len(ids)} tokens) + {params.max_new_tokens} new tokens "
            f"exceeds max_seq_len {model.max_seq_len}")
    generated: list[int] = []
    for _ in range(params.max_new_tokens):
        next_id = int(np.argmax(model.logits(ids + generated)[-1]))
        if next_id == model.eos_id:
            break
        generated.append(next_id)
        text = model.decode(generated)
        for stop in params.stop_sequences:
            cut = text.find(stop)
            if cut != -1:
                return text[:cut]
    return model.decode(generated)


@dataclass
class ChoiceScores:
    scores: list[float]  # summed token log-probabilities
    normalized: list[float]  # divided by continuation length
    chosen: int
    chosen_normalized: int


def score_choices(model, prompt: str, choices: list[str]) -> ChoiceScores:
    """Log-likelihood of each choice continuation; argmax with ties to the
    lowest index, in raw and length-normalized variants."""
    if len(choices) < 2:
        raise ConfigInvalid("need at least 2 choices")
    prompt_ids = _prompt_ids(model, prompt)
    scores = []
    normalized = []
    for choice in choices:
        cont = model.encode(" " + choice)
        full = prompt_ids + cont
        if len(full) > model.max_seq_len:
            raise ContextTooLong(
                f"prompt + choice is {len(full)} tokens; max_seq_len is "
                f"{model.max_seq_len}")
        logits = model.logits(full)
        total = 0.0
        for offset, token in enumerate(cont):
            row = logits[len(prompt_ids) - 1 + offset]
            row = row - row.max()
            total += float(row[token] - np.log(np.exp(row).sum()))
        scores.append(total)
        normalized.append(total / max(len(cont), 1))
    return ChoiceScores(scores=scores, normalized=normalized,
                        chosen=int(np.argmax(scores)),
                        chosen_normalized=int(np.argmax(normalized)))


# --- reports -----------------------------------------------------------------


@dataclass
class EvalReport:
    model_name: str
    metric: str
    scores: dict[str, float] = field(default_factory=dict)  # language -> score

    @property
    def average(self) -> float:
        return sum(self.scores.values()) / len(self.scores)

    def ordered_languages(self) -> list[str]:
        known = [l for l in LANGUAGE_ORDER if l in self.scores]
        rest = sorted(set(self.scores) - set(known))
        return known + rest

    def render_table(self) -> str:
        langs = self.ordered_languages()
        header = ["Model"] + langs + ["AVG"]
        row = [self.model_name] + [f"{self.scores[l]:.2f}" for l in langs] \
            + [f"{self.average:.2f}"]
        widths = [max(len(h), len(v)) for h, v in zip(header, row)]
        lines = [f"metric: {self.metric}",
                 "  ".join(h.ljust(w) for h, w in zip(header, widths)),
                 "  ".join(v.ljust(w) for v, w in zip(row, widths))]
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        langs = self.ordered_languages()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "metric"] + langs + ["AVG"])
            writer.writerow([self.model_name, self.metric]
                            + [f"{self.scores[l]:.6f}" for l in langs]
                            + [f"{self.average:.6f}"])


def _group_by_language(rows):
    groups: dict[str, list] = {}
    for row in rows:
        lang = row.language if hasattr(row, "language") else row["language"]
        groups.setdefault(lang, []).append(row)
    return groups


def evaluate(model, task: EvalTask, rows, seed: int = 0,
             model_name: str = "model",
             gen_params: GenerationParams | None = None) -> list[EvalReport]:
    """Zero-shot scores per language plus the AVG column, one report per
    metric the task kind defines."""
    task.validate()
    if not rows:
        raise CorpusMismatch("empty evaluation dataset")
    rng = random.Random(seed)
    groups = _group_by_language(rows)
    per_metric: dict[str, dict[str, float]] = {m: {} for m in task.metrics}

    for language in sorted(groups):
        examples = groups[language]
        if task.kind == "generation":
            # generation records keep the prompt they were built with
            # (direction-specific for mt); multiple mode re-renders so the
            # variant sampling stays seeded and reproducible
            hyps, refs = [], []
            for ex in examples:
                if task.prompt_mode == "multiple":
                    prompt = render_prompt(task, ex, rng)
                else:
                    prompt = ex.instruction
                hyps.append(generate(model, prompt,
                                     gen_params or GenerationParams()))
                refs.append(ex.targets)
            per_metric["bleu"][language] = metrics.corpus_bleu(hyps, refs)
        elif task.kind == "classification":
            mapping = instruct.label_map(task.task, language)
            if not mapping:
                raise TemplateMissing(f"no label verbalizers for {task.task}")
            verbalizers = list(mapping.values())
            preds, golds = [], []
            for ex in examples:
                prompt = render_prompt(task, ex, rng)
                choice = score_choices(model, prompt, verbalizers)
                preds.append(verbalizers[choice.chosen])
                golds.append(ex.targets)
            per_metric["macro_f1"][language] = metrics.macro_f1(
                preds, golds, labels=verbalizers)
            per_metric["accuracy"][language] = metrics.accuracy(preds, golds)
        else:  # multiple_choice
            raw_preds, norm_preds, golds = [], [], []
            for ex in examples:
                prompt = ex["prompt_fields"]["prompt"]
                choice = score_choices(model, prompt, ex["choices"])
                raw_preds.append(choice.chosen)
                norm_preds.append(choice.chosen_normalized)
                golds.append(ex["answer_index"])
            per_metric["accuracy"][language] = metrics.accuracy(raw_preds, golds)
            per_metric["accuracy_norm"][language] = metrics.accuracy(
                norm_preds, golds)
            per_metric["macro_f1"][language] = metrics.macro_f1(
                raw_preds, golds)

    return [EvalReport(model_name=model_name, metric=m, scores=scores)
            for m, scores in per_metric.items()]


def read_choices_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            for key in ("language", "prompt_fields", "choices", "answer_index"):
                if key not in row:
                    raise CorpusMismatch(f"{path}:{lineno}: missing {key!r}")
            if len(row["choices"]) < 2:
                raise CorpusMismatch(f"{path}:{lineno}: need >= 2 choices")
            rows.append(row)
    return rows

"""Instruction-dataset construction for six tasks across five languages.

Raw task data (translation pairs, labeled text, CoNLL token streams, QA
triples) is rendered through per-language prompt templates into
(instruction, inputs, targets) records, merged with a task column, and split
deterministically into train/dev/test.

Templates live in editable JSON files under data/templates/, four variants
per (task, language) and prompt language; variant 1 is the canonical prompt,
the rest are paraphrases. Machine translation is built in both directions
with English as the pivot. Sentiment and topic labels are translated into
the target language through the maps in data/labels/; NER and POS tags pass
through untouched since they are language-agnostic.
"""

from __future__ import annotations

import csv
import json
import random
import warnings
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources

from .errors import (ConfigInvalid, LabelUnknown, PairInvalid,
                     TemplateInvalid, TemplateMissing)

TASKS = ("mt", "sentiment", "ner", "pos", "qa", "topic")
MODES = ("native", "english", "multiple")
SPLITS = ("train", "dev", "test")
INSTRUCT_LANGUAGES = ("hau", "yor", "swa", "zul", "xho")
LANGUAGE_NAMES = {"hau": "Hausa", "yor": "Yoruba", "swa": "Swahili",
                  "zul": "isiZulu", "xho": "isiXhosa", "eng": "English"}

DEFAULT_SPLIT_RATIOS = (0.8, 0.1, 0.1)
# proportions of the published multilingual instruct release (148M/65M/55M)
UPSTREAM_SPLIT_RATIOS = (0.55, 0.24, 0.21)

PLACEHOLDER = "{inputs}"
OUTPUT_MARKER = "Output:"


@dataclass(frozen=True)
class TaskTemplate:
    task: str
    language: str
    variant_id: int  # 1-4
    prompt_text: str
    prompt_language: str  # "native" or "english"
    direction: str | None = None  # mt only: "to_eng" / "from_eng"

    def validate(self) -> "TaskTemplate":
        if self.prompt_text.count(PLACEHOLDER) != 1:
            raise TemplateInvalid(
                f"template ({self.task}, {self.language}, v{self.variant_id}) "
                f"must contain exactly one {PLACEHOLDER}")
        if not self.prompt_text.rstrip().endswith(OUTPUT_MARKER):
            raise TemplateInvalid(
                f"template ({self.task}, {self.language}, v{self.variant_id}) "
                f"must end with the {OUTPUT_MARKER!r} marker")
        return self


@lru_cache(maxsize=None)
def _load_task_file(task: str) -> dict:
    path = resources.files("kidogo") / "data" / "templates" / f"{task}.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise TemplateMissing(f"no template file for task {task!r}") from None


def get_variants(task: str, language: str, prompt_language: str,
                 direction: str | None = None) -> list[TaskTemplate]:
    """The four prompt variants for one (task, language, prompt language)."""
    if task not in TASKS:
        raise TemplateMissing(f"unknown task {task!r}")
    data = _load_task_file(task)
    if language not in data:
        raise TemplateMissing(f"no {task} templates for language {language!r}")
    node = data[language]
    if task == "mt":
        if direction not in ("to_eng", "from_eng"):
            raise TemplateMissing("mt templates need direction to_eng/from_eng")
        node = node[direction]
    texts = node.get(prompt_language)
    if not texts:
        raise TemplateMissing(
            f"no {prompt_language} templates for ({task}, {language})")
    return [TaskTemplate(task, language, i + 1, text, prompt_language,
                         direction).validate()
            for i, text in enumerate(texts)]


def pick_template(task: str, language: str, mode: str,
                  direction: str | None = None,
                  rng: random.Random | None = None) -> TaskTemplate:
    """native/english pick the canonical variant; multiple samples one of
    the four native variants through the supplied generator."""
    if mode not in MODES:
        raise ConfigInvalid(f"unknown prompt mode {mode!r}")
    if mode == "multiple":
        variants = get_variants(task, language, "native", direction)
        if rng is None:
            raise ConfigInvalid("multiple mode needs a seeded generator")
        return variants[rng.randrange(len(variants))]
    return get_variants(task, language, mode, direction)[0]


def render(template: TaskTemplate, example: dict) -> str:
    """Substitute {inputs}; every other byte of the template is preserved."""
    template.validate()
    if "inputs" not in example:
        raise TemplateInvalid(f"example lacks 'inputs' field for {template.task}")
    inputs = example["inputs"]
    if not inputs:
        warnings.warn(f"empty inputs substituted into ({template.task}, "
                      f"{template.language}) template")
    return template.prompt_text.replace(PLACEHOLDER, inputs)


# --- label translation --------------------------------------------------------


@lru_cache(maxsize=None)
def label_map(task: str, language: str) -> dict[str, str] | None:
    """source label -> translated label; None for tasks without maps."""
    if task in ("ner", "pos", "mt", "qa"):
        return None
    path = resources.files("kidogo") / "data" / "labels" / f"{task}.json"
    data = json.loads(path.read_text(encoding="utf-8"))
    if language not in data:
        raise LabelUnknown(f"no {task} label map for language {language!r}")
    mapping = data[language]
    if len(set(mapping.values())) != len(mapping):
        raise ConfigInvalid(f"{task}/{language} label map is not bijective")
    return mapping


def map_label(task: str, language: str, label: str) -> str:
    mapping = label_map(task, language)
    if mapping is None:
        return label  # language-agnostic tag sets pass through
    if label not in mapping:
        raise LabelUnknown(f"unknown {task} label {label!r} for {language}")
    return mapping[label]


def inverse_map_label(task: str, language: str, translated: str) -> str:
    mapping = label_map(task, language)
    if mapping is None:
        return translated
    for src, tgt in mapping.items():
        if tgt == translated:
            return src
    raise LabelUnknown(f"unknown translated {task} label {translated!r}")


# --- records -----------------------------------------------------------------


@dataclass
class InstructionRecord:
    task: str
    language: str
    instruction: str
    inputs: str
    targets: str
    split: str = ""

    def validate(self) -> "InstructionRecord":
        if not self.instruction or not self.targets:
            raise ConfigInvalid("instruction and targets must be non-empty")
        if self.task not in TASKS:
            raise ConfigInvalid(f"unknown task {self.task!r}")
        return self


def _make_record(task, language, template, inputs, targets):
    return InstructionRecord(
        task=task, language=language,
        instruction=render(template, {"inputs": inputs}),
        inputs=inputs, targets=targets).validate()


def build_mt(pairs, language: str, mode: str = "native",
             seed: int = 0) -> list[InstructionRecord]:
    """Two records per (african_text, english_text) pair, one per direction."""
    rng = random.Random(seed)
    records = []
    for i, (african, english) in enumerate(pairs):
        if not african or not english:
            raise PairInvalid(f"pair {i} has an empty side")
        t_to = pick_template("mt", language, mode, "to_eng", rng)
        records.append(_make_record("mt", language, t_to, african, english))
        t_from = pick_template("mt", language, mode, "from_eng", rng)
        records.append(_make_record("mt", language, t_from, english, african))
    return records


def build_classification(task: str, rows, language: str, mode: str = "native",
                         seed: int = 0) -> list[InstructionRecord]:
    """rows are (text, source_label); targets carry the translated label."""
    if task not in ("sentiment", "topic"):
        raise ConfigInvalid(f"{task} is not a classification task")
    rng = random.Random(seed)
    records = []
    for text, label in rows:
        template = pick_template(task, language, mode, rng=rng)
        records.append(_make_record(task, language, template, text,
                                    map_label(task, language, label)))
    return records


def build_tagging(task: str, sentences, language: str, mode: str = "native",
                  seed: int = 0) -> list[InstructionRecord]:
    """sentences are (tokens, tags) lists; tags are space-joined targets."""
    if task not in ("ner", "pos"):
        raise ConfigInvalid(f"{task} is not a tagging task")
    rng = random.Random(seed)
    records = []
    for tokens, tags in sentences:
        if len(tokens) != len(tags):
            raise PairInvalid("token/tag count mismatch")
        template = pick_template(task, language, mode, rng=rng)
        tags = [map_label(task, language, t) for t in tags]
        records.append(_make_record(task, language, template,
                                    " ".join(tokens), " ".join(tags)))
    return records


def build_qa(items, language: str, mode: str = "native",
             seed: int = 0) -> list[InstructionRecord]:
    """items are dicts with question/context/answer fields."""
    rng = random.Random(seed)
    records = []
    for item in items:
        template = pick_template("qa", language, mode, rng=rng)
        inputs = f"{item['question']}\n{item['context']}"
        records.append(_make_record("qa", language, template, inputs,
                                    item["answer"]))
    return records


# --- merge, split, stats ------------------------------------------------------


def split_sizes(n: int, ratios) -> tuple[int, int, int]:
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ConfigInvalid("split ratios must be three values summing to 1")
    n_dev = int(n * ratios[1])
    n_test = int(n * ratios[2])
    return n - n_dev - n_test, n_dev, n_test


def merge_and_split(records, ratios=DEFAULT_SPLIT_RATIOS, seed: int = 0):
    """Shuffle deterministically, assign split labels, count per language.

    Returns (records in shuffled order with split set, counts) where counts
    maps language -> {split: n, "total": n}.
    """
    records = [r for r in records]
    rng = random.Random(seed)
    order = list(range(len(records)))
    rng.shuffle(order)
    n_train, n_dev, n_test = split_sizes(len(records), ratios)
    out = []
    for rank, idx in enumerate(order):
        r = records[idx]
        split = ("train" if rank < n_train
                 else "dev" if rank < n_train + n_dev else "test")
        out.append(InstructionRecord(**{**asdict(r), "split": split}))
    counts: dict = {}
    for r in out:
        bucket = counts.setdefault(r.language, {s: 0 for s in SPLITS})
        bucket[r.split] += 1
    for bucket in counts.values():
        bucket["total"] = sum(bucket[s] for s in SPLITS)
    return out, counts


def render_counts_table(counts: dict) -> str:
    """Per-language sample counts in the release's row order."""
    rows = []
    for code in INSTRUCT_LANGUAGES + ("eng",):
        if code in counts:
            rows.append((LANGUAGE_NAMES[code], counts[code]["total"]))
    width = max((len(name) for name, _ in rows), default=8)
    lines = [f"{'Language':<{width}}  Number of samples"]
    lines.append("-" * (width + 19))
    for name, n in rows:
        lines.append(f"{name:<{width}}  {n:>17,}")
    return "\n".join(lines)


# --- file IO -----------------------------------------------------------------

RECORD_FIELDS = ("task", "language", "instruction", "inputs", "targets", "split")


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            row = {k: getattr(r, k) for k in RECORD_FIELDS}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[InstructionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            records.append(InstructionRecord(
                **{k: row.get(k, "") for k in RECORD_FIELDS}).validate())
    return records


def read_mt_tsv(path) -> list[tuple[str, str]]:
    """Two-column TSV: african text, english text."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise PairInvalid(f"{path}:{lineno}: expected 2 tab-separated "
                                  f"columns, got {len(cols)}")
            pairs.append((cols[0], cols[1]))
    return pairs


def read_labeled_csv(path) -> list[tuple[str, str]]:
    """CSV with text,label columns; a text,label header row is skipped."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for cols in csv.reader(fh):
            if not cols:
                continue
            if len(cols) != 2:
                raise PairInvalid(f"{path}: expected 2 columns, got {len(cols)}")
            if cols == ["text", "label"]:
                continue
            rows.append((cols[0], cols[1]))
    return rows


def read_conll(path) -> list[tuple[list[str], list[str]]]:
    """Token-per-line 'token tag' blocks separated by blank lines."""
    sentences = []
    tokens: list[str] = []
    tags: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                if tokens:
                    sentences.append((tokens, tags))
                    tokens, tags = [], []
                continue
            parts = line.split()
            if len(parts) < 2:
                raise PairInvalid(f"{path}: line {line!r} lacks a tag")
            tokens.append(parts[0])
            tags.append(parts[-1])
    if tokens:
        sentences.append((tokens, tags))
    return sentences


def read_qa_jsonl(path) -> list[dict]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            for key in ("question", "context", "answer"):
                if key not in row:
                    raise PairInvalid(f"{path}:{lineno}: missing {key!r}")
            items.append(row)
    return items

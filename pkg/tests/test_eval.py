import math
import random

import numpy as np
import pytest

from kidogo import evalharness as ev, instruct as ins, metrics
from kidogo.errors import ConfigInvalid, ContextTooLong, CorpusMismatch

ALPHABET = (" abcdefghijklmnopqrstuvwxyz"
            "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,:?!'-\n")


class CharStub:
    """Character-level vocabulary shared by all the stub models; id 0 is eos.
    Unknown characters get fresh ids on demand so any template text works."""

    def __init__(self):
        self.char_to_id = {c: i + 1 for i, c in enumerate(ALPHABET)}
        self.id_to_char = {i + 1: c for i, c in enumerate(ALPHABET)}
        self.vocab_size = 512
        self.eos_id = 0
        self.max_seq_len = 4096

    def _id_for(self, ch):
        if ch not in self.char_to_id:
            new_id = len(self.char_to_id) + 1
            self.char_to_id[ch] = new_id
            self.id_to_char[new_id] = ch
        return self.char_to_id[ch]

    def encode(self, text):
        return [self._id_for(c) for c in text]

    def decode(self, ids):
        return "".join(self.id_to_char.get(i, "") for i in ids)

    def _row(self, weights):
        row = np.full(self.vocab_size, -30.0)
        for token, logit in weights.items():
            row[token] = logit
        return row


class EosStub(CharStub):
    """Always argmaxes eos."""

    def logits(self, ids):
        return np.stack([self._row({self.eos_id: 10.0}) for _ in ids])


class NextMapStub(CharStub):
    """Deterministic character successor table; unmapped chars hit eos."""

    def __init__(self, next_map):
        super().__init__()
        self.next_map = next_map

    def logits(self, ids):
        rows = []
        for i in ids:
            ch = self.id_to_char.get(i, "")
            nxt = self.next_map.get(ch)
            if nxt is None:
                rows.append(self._row({self.eos_id: 10.0}))
            else:
                rows.append(self._row({self.char_to_id[nxt]: 10.0}))
        return np.stack(rows)


class UnigramStub(CharStub):
    """Position-independent char probabilities, hand-specifiable."""

    def __init__(self, probs):
        super().__init__()
        row = np.full(self.vocab_size, 1e-9)
        for ch, p in probs.items():
            row[self.char_to_id[ch]] = p
        self._logits_row = np.log(row / row.sum())

    def logits(self, ids):
        return np.tile(self._logits_row, (len(ids), 1))

    def logprob(self, ch):
        return float(self._logits_row[self.char_to_id[ch]])


class EchoStub(CharStub):
    """Reads the text between two delimiters in its own context and emits it
    verbatim, then eos; makes hypotheses equal references on copy fixtures."""

    def __init__(self, start, end):
        super().__init__()
        self.start, self.end = start, end

    def logits(self, ids):
        rows = []
        for t in range(len(ids)):
            text = self.decode(ids[: t + 1])
            lo = text.find(self.start)
            hi = text.find(self.end, lo)
            if lo == -1 or hi == -1:
                rows.append(self._row({self.eos_id: 10.0}))
                continue
            target = text[lo + len(self.start): hi]
            emitted = text[hi + len(self.end):]
            if emitted == target:
                rows.append(self._row({self.eos_id: 10.0}))
            elif target.startswith(emitted):
                nxt = target[len(emitted)]
                rows.append(self._row({self.char_to_id[nxt]: 10.0}))
            else:
                rows.append(self._row({self.eos_id: 10.0}))
        return np.stack(rows)


class OracleChoiceStub(CharStub):
    """Prefers the continuation that echoes the verbalizer sitting in the
    prompt's inputs slot (right before the Output: marker), making
    classification always correct."""

    def __init__(self, golds):
        super().__init__()
        self.golds = golds  # verbalizer strings to look for in the context

    def logits(self, ids):
        text_full = self.decode(ids)
        pos = text_full.find(" Output:")
        before = text_full[:pos] if pos != -1 else ""
        gold = next((g for g in self.golds if before.endswith(g)), None)
        rows = []
        for t in range(len(ids)):
            if gold is None:
                rows.append(self._row({self.eos_id: 1.0}))
                continue
            target = " " + gold
            text = self.decode(ids[: t + 1])
            k = 0
            for length in range(min(len(target) - 1, len(text)), -1, -1):
                if length == 0 or text.endswith(target[:length]):
                    k = length
                    break
            rows.append(self._row({self.char_to_id[target[k]]: 10.0}))
        return np.stack(rows)


class TestBleu:
    def test_identical_is_100(self):
        refs = ["the cat sat on the mat", "rain falls in the hills today"]
        assert metrics.corpus_bleu(refs, refs) == 100.0

    def test_empty_hypothesis_is_0(self):
        assert metrics.corpus_bleu([""], ["a b c d"]) == 0.0

    def test_hand_ngram_fixture(self):
        # hyp "a b c d" / ref "a b x d": unigrams 3/4, bigrams 1/3,
        # trigrams 0/2 -> 1/3 smoothed, quadrigrams 0/1 -> 1/2 smoothed;
        # equal lengths so no brevity penalty.
        expected = 100.0 * (3 / 4 * 1 / 3 * 1 / 3 * 1 / 2) ** 0.25
        got = metrics.corpus_bleu(["a b c d"], ["a b x d"])
        assert abs(got - expected) < 1e-6
        assert abs(got - 45.180100) < 1e-4

    def test_brevity_penalty(self):
        # hyp shorter than ref: all precisions 1 (missing orders smooth to
        # 1), penalty exp(1 - 4/3)
        expected = 100.0 * math.exp(1 - 4 / 3)
        got = metrics.corpus_bleu(["a b c"], ["a b c d"])
        assert abs(got - expected) < 1e-9

    def test_corruption_never_increases(self):
        ref = "the quick brown fox jumps over the lazy dog"
        base = metrics.corpus_bleu([ref], [ref])
        words = ref.split()
        for i in range(len(words)):
            corrupted = " ".join(w if j != i else "zzz"
                                 for j, w in enumerate(words))
            assert metrics.corpus_bleu([corrupted], [ref]) <= base

    def test_bounds_random(self):
        rng = random.Random(0)
        vocab = ["alpha", "beta", "gamma", "delta"]
        for _ in range(50):
            hyp = " ".join(rng.choices(vocab, k=rng.randint(1, 10)))
            ref = " ".join(rng.choices(vocab, k=rng.randint(1, 10)))
            score = metrics.corpus_bleu([hyp], [ref])
            assert 0.0 <= score <= 100.0

    def test_punctuation_split(self):
        assert metrics.bleu_tokenize("Hello, world!") == \
            ["Hello", ",", "world", "!"]

    def test_mismatch_errors(self):
        with pytest.raises(CorpusMismatch):
            metrics.corpus_bleu(["a"], ["a", "b"])
        with pytest.raises(CorpusMismatch):
            metrics.corpus_bleu(["a"], [" "])


class TestMacroF1:
    def test_perfect(self):
        assert metrics.macro_f1(["a", "b", "a"], ["a", "b", "a"]) == 100.0

    def test_all_one_class_balanced(self):
        # predicting all A over golds A,A,B,B: class A F1 = 2/3, class B 0
        got = metrics.macro_f1(["A", "A", "A", "A"], ["A", "A", "B", "B"])
        assert abs(got - 100.0 * (2 / 3) / 2) < 1e-9

    def test_disjoint_labels(self):
        assert metrics.macro_f1(["x", "x"], ["y", "y"]) == 0.0

    def test_absent_label_counts_zero(self):
        with_absent = metrics.macro_f1(["a"], ["a"], labels=["a", "b"])
        assert abs(with_absent - 50.0) < 1e-9

    def test_length_mismatch(self):
        with pytest.raises(CorpusMismatch):
            metrics.macro_f1(["a"], ["a", "b"])


class TestGenerate:
    def test_always_eos_gives_empty(self):
        out = ev.generate(EosStub(), "prompt", ev.GenerationParams())
        assert out == ""

    def test_fixed_table_exact_string(self):
        # a->b->c->d->e then eos: prompting with "a" must yield "bcde"
        stub = NextMapStub({"a": "b", "b": "c", "c": "d", "d": "e"})
        out = ev.generate(stub, "a", ev.GenerationParams(max_new_tokens=10))
        assert out == "bcde"

    def test_deterministic(self):
        stub = NextMapStub({"a": "b", "b": "a"})
        p = ev.GenerationParams(max_new_tokens=6)
        assert ev.generate(stub, "a", p) == ev.generate(stub, "a", p)

    def test_stop_sequence(self):
        stub = NextMapStub({"a": "x", "x": "\n", "\n": "y"})
        out = ev.generate(stub, "a", ev.GenerationParams(max_new_tokens=10))
        assert out == "x"

    def test_context_too_long(self):
        stub = EosStub()
        stub.max_seq_len = 8
        with pytest.raises(ContextTooLong):
            ev.generate(stub, "abcdefgh", ev.GenerationParams(max_new_tokens=4))

    def test_bad_params(self):
        with pytest.raises(ConfigInvalid):
            ev.GenerationParams(max_new_tokens=0).validate()


class TestScoreChoices:
    def test_prob_one_choice_wins(self):
        stub = UnigramStub({"a": 0.9, " ": 0.05, "b": 0.025, "c": 0.025})
        result = ev.score_choices(stub, "zq", ["a", "b"])
        assert result.chosen == 0

    def test_identical_choices_tie_to_zero(self):
        stub = UnigramStub({"a": 0.5, " ": 0.5})
        result = ev.score_choices(stub, "zq", ["a", "a", "a"])
        assert result.chosen == 0
        assert result.chosen_normalized == 0

    def test_hand_logprob_arithmetic(self):
        stub = UnigramStub({" ": 0.25, "a": 0.5, "b": 0.125, "c": 0.125})
        result = ev.score_choices(stub, "zq", ["a", "b", "c"])
        # continuation " a": log p(space) + log p(a), etc.
        expected = [stub.logprob(" ") + stub.logprob("a"),
                    stub.logprob(" ") + stub.logprob("b"),
                    stub.logprob(" ") + stub.logprob("c")]
        np.testing.assert_allclose(result.scores, expected, atol=1e-9)
        assert result.chosen == 0

    def test_normalized_flips_for_longer_choice(self):
        # raw total favors the single "a"; per-token average favors "aaa"
        stub = UnigramStub({" ": 0.25, "a": 0.5, "b": 0.125, "c": 0.125})
        result = ev.score_choices(stub, "zq", ["a", "aaa"])
        assert result.scores[0] > result.scores[1]
        assert result.chosen == 0
        assert result.normalized[1] > result.normalized[0]
        assert result.chosen_normalized == 1

    def test_argmax_shift_invariant(self):
        stub = UnigramStub({" ": 0.25, "a": 0.5, "b": 0.25})
        result = ev.score_choices(stub, "zq", ["a", "b"])
        shifted = [s + 123.45 for s in result.scores]
        assert int(np.argmax(shifted)) == result.chosen

    def test_needs_two_choices(self):
        with pytest.raises(ConfigInvalid):
            ev.score_choices(UnigramStub({"a": 1.0}), "p", ["only"])


class TestRenderPrompt:
    def test_native_sentiment_swahili(self):
        task = ev.EvalTask(kind="classification", task="sentiment",
                           prompt_mode="native")
        prompt = ev.render_prompt(task, {"language": "swa", "inputs": "nzuri"})
        assert prompt.startswith("Tafadhali tambua mawazo yaliyoonyeshwa")

    def test_english_sentiment_swahili(self):
        task = ev.EvalTask(kind="classification", task="sentiment",
                           prompt_mode="english")
        prompt = ev.render_prompt(task, {"language": "swa", "inputs": "nzuri"})
        assert prompt.startswith("Please identify the sentiment reflected")

    def test_multiple_mode_reproducible(self):
        task = ev.EvalTask(kind="classification", task="sentiment",
                           prompt_mode="multiple")
        seq1 = [ev.render_prompt(task, {"language": "swa", "inputs": "x"},
                                 random.Random(3)) for _ in range(8)]
        seq2 = [ev.render_prompt(task, {"language": "swa", "inputs": "x"},
                                 random.Random(3)) for _ in range(8)]
        assert seq1 == seq2


def mc_row(lang, prompt, choices, answer):
    return {"language": lang, "prompt_fields": {"prompt": prompt},
            "choices": choices, "answer_index": answer}


class TestEvaluate:
    def test_always_correct_classification(self):
        all_verbs = []
        for lang in ("swa", "hau", "yor"):
            all_verbs.extend(ins.label_map("sentiment", lang).values())
        stub = OracleChoiceStub(all_verbs)
        records = []
        for lang in ("swa", "hau", "yor"):
            for source in ("positive", "negative"):
                translated = ins.map_label("sentiment", lang, source)
                records.append(ins.InstructionRecord(
                    task="sentiment", language=lang,
                    instruction="", inputs=translated, targets=translated,
                    split="test"))
        task = ev.EvalTask(kind="classification", task="sentiment",
                           prompt_mode="native")
        reports = ev.evaluate(stub, task, records, model_name="oracle")
        by_metric = {r.metric: r for r in reports}
        for lang in ("swa", "hau", "yor"):
            assert by_metric["accuracy"].scores[lang] == 100.0
        assert by_metric["accuracy"].average == 100.0

    def test_mt_echo_scores_bleu_100(self):
        stub = EchoStub("uliotolewa. ", " Output:")
        records = []
        for text in ("habari njema kwa watu wote leo",
                     "mvua kubwa ilinyesha jana usiku"):
            rec = ins.build_qa([{"question": "q", "context": "c",
                                 "answer": text}], "swa")[0]
            rec = ins.InstructionRecord(
                task=rec.task, language=rec.language,
                instruction=f"Jibu swali kwa kutumia muktadha uliotolewa. "
                            f"{text} Output:",
                inputs=text, targets=text, split="test")
            records.append(rec)
        task = ev.EvalTask(kind="generation", task="qa", prompt_mode="native")
        reports = ev.evaluate(stub, task, records,
                              gen_params=ev.GenerationParams(max_new_tokens=64))
        assert reports[0].metric == "bleu"
        assert reports[0].scores["swa"] == 100.0

    def test_avg_is_exact_mean(self):
        stub = UnigramStub({" ": 0.2, "a": 0.5, "b": 0.3})
        rows = [
            mc_row("swa", "p", ["a", "b"], 0),
            mc_row("swa", "p", ["a", "b"], 0),
            mc_row("hau", "p", ["a", "b"], 0),
            mc_row("hau", "p", ["a", "b"], 1),
            mc_row("yor", "p", ["a", "b"], 1),
            mc_row("yor", "p", ["a", "b"], 1),
        ]
        task = ev.EvalTask(kind="multiple_choice", task="qa")
        reports = ev.evaluate(stub, task, rows)
        acc = next(r for r in reports if r.metric == "accuracy")
        assert acc.scores == {"swa": 100.0, "hau": 50.0, "yor": 0.0}
        assert abs(acc.average - (100.0 + 50.0 + 0.0) / 3) < 1e-9

    def test_report_table_and_csv(self, tmp_path):
        report = ev.EvalReport(model_name="toy", metric="accuracy",
                               scores={"swa": 80.0, "hau": 60.0})
        table = report.render_table()
        assert "AVG" in table and "70.00" in table
        path = tmp_path / "report.csv"
        report.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "model,metric,swa,hau,AVG"
        assert lines[1].startswith("toy,accuracy,80.000000,60.000000,70.0000")

    def test_empty_dataset(self):
        task = ev.EvalTask(kind="multiple_choice", task="qa")
        with pytest.raises(CorpusMismatch):
            ev.evaluate(UnigramStub({"a": 1.0}), task, [])

    def test_metric_kind_compatibility(self):
        with pytest.raises(ConfigInvalid):
            ev.EvalTask(kind="bogus", task="mt").validate()
        with pytest.raises(ConfigInvalid):
            # variant sampling cannot pick an mt template without a direction
            ev.EvalTask(kind="generation", task="mt",
                        prompt_mode="multiple").validate()
        assert "bleu" in ev.EvalTask(kind="generation", task="mt",
                                     direction="to_eng").validate().metrics
        assert "bleu" not in ev.EvalTask(kind="classification",
                                         task="sentiment").validate().metrics

    def test_choices_jsonl_reader(self, tmp_path):
        import json
        path = tmp_path / "mc.jsonl"
        rows = [mc_row("swa", "chagua jibu", ["ndiyo", "hapana"], 1)]
        path.write_text("\n".join(json.dumps(r, ensure_ascii=False)
                                  for r in rows) + "\n", encoding="utf-8")
        loaded = ev.read_choices_jsonl(path)
        assert loaded == rows
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"language": "swa"}\n', encoding="utf-8")
        with pytest.raises(CorpusMismatch):
            ev.read_choices_jsonl(bad)

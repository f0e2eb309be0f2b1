import math

import numpy as np
import pytest

from tsa.data import SentimentLabel, SplitSpec, check_record, clean_record, stratified_split
from tsa.encoder import EncoderConfig
from tsa.experiments import (
    CUE_CLASS,
    BenchmarkReport,
    SyntheticConfig,
    VariantResult,
    filler_lexicon,
    generate_synthetic,
    oracle_labels,
    read_csv_report,
    render_report,
    emit_report,
    run_benchmark,
)
from tsa.metrics import divergent_subset
from tsa.models import build_model, predict
from tsa.tokenizer import build_vocab
from tsa.training import TrainConfig, train

from helpers import make_record


class TestGenerator:
    def test_no_divergence(self):
        records = generate_synthetic(SyntheticConfig(n_examples=500, divergence_rate=0.0))
        assert all(r.sentence_sentiment == r.targeted_sentiment for r in records)

    def test_divergence_rate(self):
        records = generate_synthetic(SyntheticConfig(n_examples=1000, divergence_rate=0.3, seed=4))
        sigma = math.sqrt(1000 * 0.3 * 0.7)
        assert abs(len(divergent_subset(records)) - 300) <= 3 * sigma

    def test_full_divergence(self):
        records = generate_synthetic(SyntheticConfig(n_examples=300, divergence_rate=1.0))
        assert len(divergent_subset(records)) == 300

    def test_records_valid_and_clean(self):
        records = generate_synthetic(SyntheticConfig(n_examples=500, noise_rate=0.5, seed=2))
        assert len({r.id for r in records}) == 500
        for r in records:
            check_record(r)
            clean, (s, e) = clean_record(r)
            assert clean[s:e] == r.target.lstrip("#")

    def test_class_mix(self):
        records = generate_synthetic(SyntheticConfig(n_examples=3000))
        counts = np.bincount([int(r.targeted_sentiment) for r in records], minlength=3) / 3000
        np.testing.assert_allclose(counts, [0.19, 0.58, 0.23], atol=0.03)

    @pytest.mark.parametrize("shared", [False, True])
    def test_oracle_is_perfect(self, shared):
        cfg = SyntheticConfig(n_examples=800, shared_cues=shared, noise_rate=0.3, seed=7)
        for r in generate_synthetic(cfg):
            assert oracle_labels(r) == (r.sentence_sentiment, r.targeted_sentiment)

    def test_deterministic(self):
        cfg = SyntheticConfig(n_examples=200, seed=9)
        assert generate_synthetic(cfg) == generate_synthetic(cfg)
        assert generate_synthetic(cfg) != generate_synthetic(SyntheticConfig(n_examples=200, seed=10))

    def test_local_cue_follows_target(self):
        for r in generate_synthetic(SyntheticConfig(n_examples=200, seed=1)):
            clean, (s, e) = clean_record(r)
            nxt = clean[e:].split()[0]
            assert CUE_CLASS[nxt] == r.targeted_sentiment

    def test_lexicon(self):
        words = filler_lexicon(200)
        assert len(set(words)) == 200
        assert not set(words) & set(CUE_CLASS)

    @pytest.mark.parametrize("kw", [dict(divergence_rate=1.5), dict(n_examples=0),
                                    dict(min_length=4), dict(min_length=9, max_length=8)])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            SyntheticConfig(**kw)


def _report():
    results = [
        VariantResult("baseline", 0.6461538461538462, 0.0, 600, 180, epochs=5),
        VariantResult("t-bert", 1.0, 1.0, 600, 180, epochs=4),
        VariantResult("t-bert-marked", 0.99, 0.9876543209876543, 600, 180, epochs=4),
        VariantResult("t-bert-marked-ts", 1.0, 1.0, 600, 180, epochs=5),
        VariantResult("t-bert-marked-mp", 1.0, 1.0, 600, 180, epochs=4),
    ]
    return BenchmarkReport(results, {"train": 0, "encoder": 0}, "abc123")


class TestReports:
    def test_markdown_layout(self):
        text = render_report(_report(), "markdown")
        lines = text.splitlines()
        assert lines[0] == "| Model | F1 (full) | F1 (divergent) |"
        rows = [line for line in lines[2:] if line.startswith("|")]
        assert len(rows) == 5
        assert rows[0] == "| Baseline | 0.646 | 0.000 |"
        assert rows[4].startswith("| T-BERT-marked-MP |")

    def test_csv_round_trip(self, tmp_path):
        report = _report()
        path = tmp_path / "r.csv"
        emit_report(report, path, "csv")
        back = read_csv_report(path)
        assert back == {r.variant: (r.f1_full, r.f1_divergent) for r in report.results}

    def test_byte_deterministic(self, tmp_path):
        for fmt in ("markdown", "csv"):
            emit_report(_report(), tmp_path / "a", fmt)
            emit_report(_report(), tmp_path / "b", fmt)
            assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_failed_variant(self):
        report = _report()
        report.results[1] = VariantResult("t-bert", None, None, 600, 180, error="boom")
        assert "| T-BERT | failed | failed |" in render_report(report)
        assert "t-bert,," in render_report(report, "csv")

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            render_report(_report(), "html")


@pytest.fixture(scope="module")
def small_split():
    records = generate_synthetic(SyntheticConfig(n_examples=400, seed=5))
    return stratified_split(records, SplitSpec(seed=5))


class TestBenchmark:
    def test_small_run(self, small_split):
        train_set, test_set, val_set = small_split
        cfg = TrainConfig(max_epochs=2, warmup_steps=10)
        enc = EncoderConfig(vocab_size=400, hidden_size=16, num_layers=1, num_heads=2,
                            ffn_size=32, max_len=24)
        report = run_benchmark((train_set, val_set, test_set), ["baseline", "t-bert-marked-mp"],
                               cfg, encoder_cfg=enc, vocab_size=400)
        assert [r.variant for r in report.results] == ["baseline", "t-bert-marked-mp"]
        for r in report.results:
            assert r.error is None
            assert 0.0 <= r.f1_full <= 1.0 and 0.0 <= r.f1_divergent <= 1.0
            assert r.n_test == len(test_set)
            assert r.n_divergent == len(divergent_subset(test_set))
            assert r.epochs == 2
        assert set(report.histories) == {"baseline", "t-bert-marked-mp"}

    def test_failure_is_reported(self, small_split):
        train_set, test_set, val_set = small_split
        # a context window too small for the target makes encoding fail
        enc = EncoderConfig(vocab_size=400, hidden_size=8, num_layers=1, num_heads=2,
                            ffn_size=8, max_len=4)
        report = run_benchmark((train_set, val_set, test_set), ["t-bert-marked"],
                               TrainConfig(max_epochs=1), encoder_cfg=enc, vocab_size=400)
        (result,) = report.results
        assert result.f1_full is None and "TargetTooLong" in result.error


def test_trained_model_reads_the_local_cue():
    records = generate_synthetic(SyntheticConfig(n_examples=1500, seed=11))
    train_set, _, val_set = stratified_split(records, SplitSpec(seed=11))
    vocab = build_vocab([clean_record(r)[0] for r in train_set], 1000)
    model = build_model("t-bert-marked-mp", EncoderConfig(vocab_size=len(vocab), seed=11), vocab)
    model, _ = train(model, train_set, val_set, TrainConfig(max_epochs=6, patience=2))
    # negative cue on the target, positive mood for the writer
    rec = make_record("whatsapp çöktü de biraz rahatladım", "whatsapp", "positive", "negative")
    label, probs = predict(model, rec)
    assert label is SentimentLabel.NEGATIVE
    assert probs[1] > 0.5

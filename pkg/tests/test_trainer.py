"""Training pipeline tests on a 12-clip synthetic corpus.

Heavier end-to-end quality checks live in test_acceptance; here we pin
determinism, regime/supervision contracts, warm starts, distillation
mechanics, and the estimator wrapper, all with throwaway-sized models.
"""

import numpy as np
import pytest
import torch
from sklearn.base import clone

from partialsed.corpus import PARTIAL, STRONG, WEAK, SplitSpec, split_semi
from partialsed.errors import ConfigError, ContractError, DataError
from partialsed.labelkit import CandidateTable
from partialsed.losses import LossWeights
from partialsed.network import ModelConfig, build
from partialsed.trainer import (
    MultitaskSedAsc,
    RunLog,
    TrainConfig,
    corpus_loss,
    decode_events,
    default_model_config,
    evaluate,
    infer,
    load_result,
    self_distill,
    train,
)
from partialsed.vocab import Vocabulary

TINY_MODEL = ModelConfig(
    frames=100,
    mel_bins=32,
    events=8,
    scenes=4,
    trunk_channels=8,
    scene_channels=8,
    scene_pool=25,
    scene_hidden=8,
    d_model=8,
    attention_heads=2,
    ff_width=16,
    event_hidden=8,
    seed=1,
)


def quick(**over) -> TrainConfig:
    base = dict(mode="strong-mtl", epochs=2, batch_size=8, seed=0)
    base.update(over)
    return TrainConfig(**base)


def states_equal(a, b) -> bool:
    a, b = a.state_dict(), b.state_dict()
    return set(a) == set(b) and all(torch.equal(a[k], b[k]) for k in a)


def reordered(corpus, relabeled_groups):
    """with_clips wants the original id order back."""
    by_id = {c.id: c for group in relabeled_groups for c in group}
    return corpus.with_clips([by_id[c.id] for c in corpus.clips])


@pytest.fixture(scope="module")
def partial_corpus(tiny_corpus):
    table = CandidateTable.from_cooccurrence(tiny_corpus.clips)
    strong, degraded = split_semi(
        tiny_corpus.clips,
        SplitSpec(strong_fraction=0.5, degrade_to=PARTIAL, seed=0),
        Vocabulary(tiny_corpus.events),
        candidate_table=table,
    )
    return reordered(tiny_corpus, [strong, degraded])


@pytest.fixture(scope="module")
def weak_corpus(tiny_corpus):
    strong, degraded = split_semi(
        tiny_corpus.clips,
        SplitSpec(strong_fraction=0.0, degrade_to=WEAK, seed=0),
        Vocabulary(tiny_corpus.events),
    )
    return reordered(tiny_corpus, [strong, degraded])


class TestTrainConfig:
    def test_json_round_trip(self):
        cfg = quick(weights=LossWeights(alpha=0.01), phi=0.3)
        again = TrainConfig.from_json(cfg.to_json())
        assert again == cfg
        assert again.hash() == cfg.hash()

    def test_hash_tracks_fields(self):
        assert quick().hash() != quick(seed=1).hash()
        assert quick().hash() != quick(mode="semi-weak").hash()

    @pytest.mark.parametrize(
        "kw",
        [
            dict(mode="strong"),
            dict(optimizer="lbfgs"),
            dict(epochs=-1),
            dict(batch_size=0),
            dict(learning_rate=0.0),
            dict(detection_threshold=1.0),
            dict(phi=0.0),
        ],
    )
    def test_rejections(self, kw):
        with pytest.raises(ConfigError):
            quick(**kw)


class TestRunLog:
    def test_append_and_losses(self):
        log = RunLog(mode="strong-mtl", seed=0, config_hash="abc")
        log.append(epoch=0, scene=1.0, event=2.0, total=3.0, seconds=0.1)
        log.append(epoch=1, scene=0.5, event=1.0, total=1.5, seconds=0.1)
        assert log.losses() == [3.0, 1.5]
        assert log.losses("scene_loss") == [1.0, 0.5]

    def test_save_round_trip(self, tmp_path):
        import json

        log = RunLog(mode="semi-weak", seed=3, config_hash="ff", stage="stage1")
        log.append(epoch=0, scene=1.0, event=2.0, total=3.0, seconds=0.2)
        log.final_metrics = {"segment_micro_f": 0.5}
        path = tmp_path / "runlog.json"
        log.save(path)
        again = RunLog.from_json(json.loads(path.read_text(encoding="utf-8")))
        assert again == log


class TestTrainBasics:
    def test_deterministic_per_seed(self, tiny_corpus):
        a = train(tiny_corpus, quick(epochs=3), TINY_MODEL)
        b = train(tiny_corpus, quick(epochs=3), TINY_MODEL)
        assert a.log.losses() == b.log.losses()
        assert states_equal(a.model, b.model)

    def test_seed_moves_the_run(self, tiny_corpus):
        a = train(tiny_corpus, quick(epochs=2, seed=0), TINY_MODEL)
        b = train(tiny_corpus, quick(epochs=2, seed=7), TINY_MODEL)
        assert a.log.losses() != b.log.losses()

    def test_zero_epochs_is_fresh_init(self, tiny_corpus):
        result = train(tiny_corpus, quick(epochs=0), TINY_MODEL)
        assert result.log.records == []
        assert not result.model.training
        assert states_equal(result.model, build(TINY_MODEL))

    def test_initial_state_warm_start(self, tiny_corpus):
        donor = train(tiny_corpus, quick(epochs=1), TINY_MODEL)
        warm = train(
            tiny_corpus,
            quick(epochs=0),
            TINY_MODEL,
            initial_state=donor.model.state_dict(),
        )
        assert states_equal(warm.model, donor.model)

    def test_loss_decreases_on_tiny_overfit(self, tiny_corpus):
        result = train(tiny_corpus, quick(epochs=10), TINY_MODEL)
        losses = result.log.losses()
        assert losses[-1] < losses[0]

    def test_default_model_config_follows_corpus(self, tiny_corpus):
        cfg = default_model_config(tiny_corpus, seed=4)
        assert cfg.frames == tiny_corpus.feature_config.frames
        assert cfg.mel_bins == tiny_corpus.feature_config.mel_bins
        assert cfg.events == len(tiny_corpus.events)
        assert cfg.scenes == len(tiny_corpus.scenes)
        assert cfg.seed == 4

    def test_normalizer_attached(self, tiny_corpus):
        result = train(tiny_corpus, quick(epochs=0), TINY_MODEL)
        if tiny_corpus.feature_config.normalization == "per-corpus-zscore":
            assert result.normalizer is not None
        else:
            assert result.normalizer is None


class TestSupervisionContracts:
    def test_strong_mode_rejects_weak_clips(self, weak_corpus):
        with pytest.raises(ContractError, match="supervision"):
            train(weak_corpus, quick(mode="strong-mtl"), TINY_MODEL)

    def test_weak_mode_rejects_strong_clips(self, tiny_corpus):
        with pytest.raises(ContractError, match="supervision"):
            train(tiny_corpus, quick(mode="weak-mtl"), TINY_MODEL)

    def test_semi_weak_rejects_partial_clips(self, partial_corpus):
        with pytest.raises(ContractError, match="supervision"):
            train(partial_corpus, quick(mode="semi-weak"), TINY_MODEL)

    def test_empty_corpus(self, tiny_corpus):
        with pytest.raises(DataError, match="empty"):
            train(tiny_corpus.subset([]), quick(), TINY_MODEL)

    def test_all_strong_semi_matches_strong_mode(self, tiny_corpus):
        # fraction 1.0 must reduce the semi objective to the strong one,
        # bit for bit, over the whole trajectory
        a = train(tiny_corpus, quick(mode="strong-mtl", epochs=3), TINY_MODEL)
        b = train(tiny_corpus, quick(mode="semi-partial", epochs=3), TINY_MODEL)
        assert a.log.losses() == b.log.losses()
        assert states_equal(a.model, b.model)

    def test_semi_weak_trains_on_mixture(self, weak_corpus, tiny_corpus):
        strong, degraded = split_semi(
            tiny_corpus.clips,
            SplitSpec(strong_fraction=0.5, degrade_to=WEAK, seed=1),
            Vocabulary(tiny_corpus.events),
        )
        mixed = reordered(tiny_corpus, [strong, degraded])
        result = train(mixed, quick(mode="semi-weak", epochs=1), TINY_MODEL)
        assert len(result.log.records) == 1


class TestDecodeEvents:
    EVENTS = ["car", "dog"]

    def test_runs_to_intervals(self):
        post = np.zeros((10, 2), dtype=np.float32)
        post[2:5, 0] = 0.9
        post[0:1, 1] = 0.7
        post[8:10, 1] = 0.6
        got = decode_events(post, threshold=0.5, hop=0.1, events=self.EVENTS)
        spans = {(iv.label, round(iv.onset, 6), round(iv.offset, 6)) for iv in got}
        assert spans == {("car", 0.2, 0.5), ("dog", 0.0, 0.1), ("dog", 0.8, 1.0)}

    def test_threshold_is_inclusive(self):
        post = np.zeros((4, 1), dtype=np.float32)
        post[1, 0] = 0.5
        got = decode_events(post, threshold=0.5, hop=0.1, events=["car"])
        assert len(got) == 1

    def test_silence_decodes_empty(self):
        post = np.full((4, 2), 0.4, dtype=np.float32)
        assert decode_events(post, 0.5, 0.1, self.EVENTS) == []


@pytest.fixture(scope="module")
def fitted(tiny_corpus):
    return train(tiny_corpus, quick(epochs=2), TINY_MODEL)


class TestInference:
    def test_predictions_align_with_clips(self, fitted, tiny_corpus):
        preds = infer(fitted.model, tiny_corpus, normalizer=fitted.normalizer)
        assert [p.clip_id for p in preds] == [c.id for c in tiny_corpus.clips]
        for p in preds:
            assert p.scene in tiny_corpus.scenes
            assert p.posteriors.shape == (100, 8)
            assert p.scene_logits.shape == (4,)
            assert np.all(p.posteriors >= 0) and np.all(p.posteriors <= 1)

    def test_scene_is_argmax(self, fitted, tiny_corpus):
        preds = infer(fitted.model, tiny_corpus, normalizer=fitted.normalizer)
        for p in preds:
            assert p.scene == tiny_corpus.scenes[int(p.scene_logits.argmax())]

    def test_batch_size_does_not_change_outputs(self, fitted, tiny_corpus):
        a = infer(fitted.model, tiny_corpus, normalizer=fitted.normalizer,
                  batch_size=3)
        b = infer(fitted.model, tiny_corpus, normalizer=fitted.normalizer,
                  batch_size=64)
        for pa, pb in zip(a, b):
            np.testing.assert_allclose(pa.posteriors, pb.posteriors,
                                       rtol=1e-5, atol=1e-6)

    def test_evaluate_report_structure(self, fitted, tiny_corpus):
        report, preds = evaluate(fitted, tiny_corpus)
        assert len(preds) == len(tiny_corpus.clips)
        for section in ("scene", "event_segment", "event_intersection"):
            assert 0.0 <= report[section]["micro_f"] <= 1.0
            assert 0.0 <= report[section]["macro_f"] <= 1.0
        assert set(report["event_segment"]["counts"]) == set(tiny_corpus.events)

    def test_corpus_loss_composition(self, fitted, tiny_corpus):
        cfg = quick()
        losses = corpus_loss(fitted, tiny_corpus, cfg)
        expected = cfg.weights.alpha * losses["scene"] + cfg.weights.beta * losses["event"]
        assert losses["total"] == expected
        again = corpus_loss(fitted, tiny_corpus, cfg)
        assert losses == again

    def test_corpus_loss_batch_invariant(self, fitted, tiny_corpus):
        a = corpus_loss(fitted, tiny_corpus, quick(batch_size=3))
        b = corpus_loss(fitted, tiny_corpus, quick(batch_size=64))
        assert a["event"] == pytest.approx(b["event"], rel=1e-4)
        assert a["scene"] == pytest.approx(b["scene"], rel=1e-4)


class TestModelFileRoundTrip:
    def test_save_load_result(self, tiny_corpus, tmp_path):
        result = train(tiny_corpus, quick(epochs=1), TINY_MODEL)
        path = tmp_path / "model.pt"
        result.save(path)
        again = load_result(path)
        assert states_equal(again.model, result.model)
        assert again.events == result.events
        assert again.scenes == result.scenes
        assert again.log.records == result.log.records
        assert again.log.mode == "strong-mtl"
        if result.normalizer is not None:
            assert again.normalizer.state() == result.normalizer.state()
        x = torch.from_numpy(tiny_corpus.features[:2])
        assert torch.equal(result.model(x).frame_logits,
                           again.model(x).frame_logits)


class TestSelfDistill:
    def test_needs_strong_plus_partial(self, tiny_corpus, weak_corpus):
        with pytest.raises(ContractError, match="strong\\+partial"):
            self_distill(tiny_corpus, quick(mode="semi-partial"), TINY_MODEL)
        with pytest.raises(ContractError, match="strong\\+partial"):
            self_distill(weak_corpus, quick(mode="semi-partial"), TINY_MODEL)

    def test_stage1_untouched_and_stage3_fresh(self, partial_corpus):
        cfg = quick(mode="semi-partial", epochs=1)
        result = self_distill(partial_corpus, cfg, TINY_MODEL)
        reference = train(partial_corpus, cfg, TINY_MODEL)
        # stage 2 and 3 must not disturb the stage-1 weights
        assert states_equal(result.stage1.model, reference.model)
        assert result.stage1.log.stage == "stage1"
        assert result.stage3.log.stage == "stage3"
        assert result.stage3.log.mode == "strong-mtl"
        assert result.model is result.stage3.model

    def test_distilled_clips_cover_partial_set(self, partial_corpus):
        result = self_distill(
            partial_corpus, quick(mode="semi-partial", epochs=1), TINY_MODEL
        )
        partial_ids = [c.id for c in partial_corpus.clips
                       if c.supervision == PARTIAL]
        assert [c.id for c in result.distilled_clips] == partial_ids
        for clip in result.distilled_clips:
            assert clip.supervision == STRONG
            for iv in clip.events:
                assert 0.0 <= iv.onset < iv.offset <= clip.length + 1e-9

    def test_restriction_drops_noncandidate_labels(self, partial_corpus):
        # an untrained model sits near posterior 0.5 everywhere, so the
        # phi=0.2 threshold marks every class; restriction must then cut
        # the labels back to each clip's candidate set
        by_id = {c.id: c for c in partial_corpus.clips}
        open_run = self_distill(
            partial_corpus, quick(mode="semi-partial", epochs=0), TINY_MODEL
        )
        tight_run = self_distill(
            partial_corpus,
            quick(mode="semi-partial", epochs=0, restrict_to_candidates=True),
            TINY_MODEL,
        )
        assert any(
            {iv.label for iv in clip.events} - by_id[clip.id].partial
            for clip in open_run.distilled_clips
        )
        for clip in tight_run.distilled_clips:
            assert {iv.label for iv in clip.events} <= set(by_id[clip.id].partial)

    def test_fine_tune_changes_stage3(self, partial_corpus):
        cold = self_distill(
            partial_corpus, quick(mode="semi-partial", epochs=1), TINY_MODEL
        )
        warm = self_distill(
            partial_corpus,
            quick(mode="semi-partial", epochs=1, fine_tune=True),
            TINY_MODEL,
        )
        # the flag only affects stage 3 initialization
        assert states_equal(cold.stage1.model, warm.stage1.model)
        assert not states_equal(cold.stage3.model, warm.stage3.model)


class TestEstimator:
    def test_get_set_params(self):
        est = MultitaskSedAsc(epochs=5, zeta=0.02)
        params = est.get_params()
        assert params["epochs"] == 5
        assert params["zeta"] == 0.02
        est.set_params(mode="semi-weak", seed=9)
        assert est.mode == "semi-weak"
        assert clone(est).get_params() == est.get_params()

    def test_train_config_mapping(self):
        est = MultitaskSedAsc(
            mode="semi-partial", epochs=3, alpha=0.01, zeta=0.5, phi=0.4
        )
        cfg = est._train_config()
        assert cfg.mode == "semi-partial"
        assert cfg.epochs == 3
        assert cfg.weights == LossWeights(alpha=0.01, beta=1.0, gamma=1.0, zeta=0.5)
        assert cfg.phi == 0.4

    def test_unfitted_rejected(self, tiny_corpus):
        with pytest.raises(ContractError, match="before fit"):
            MultitaskSedAsc().predict(tiny_corpus)

    def test_fit_predict_score(self, tiny_corpus):
        est = MultitaskSedAsc(epochs=2, batch_size=8)
        assert est.fit(tiny_corpus, TINY_MODEL) is est
        preds = est.predict(tiny_corpus)
        assert [p.clip_id for p in preds] == [c.id for c in tiny_corpus.clips]
        scenes = est.predict_scenes(tiny_corpus)
        assert all(s in tiny_corpus.scenes for s in scenes)
        assert 0.0 <= est.score(tiny_corpus) <= 1.0

    def test_distill_entry_point(self, partial_corpus):
        est = MultitaskSedAsc(mode="semi-partial", epochs=1, batch_size=8)
        est.distill(partial_corpus, TINY_MODEL)
        assert est.result_ is est.distill_result_.stage3
        assert len(est.predict(partial_corpus)) == len(partial_corpus.clips)

import pytest
import torch

from sqlsynth.parser import ParserTrainConfig, train_parser
from sqlsynth.pipeline import SynthesizedExample
from sqlsynth.schema import AnnotatedPair, Entity, EntitySequence, SchemaGraph
from sqlsynth.training import (
    TrainingMixtureConfig,
    build_training_mixture,
    tag_augmented,
    train_student,
)


@pytest.fixture
def schema():
    return SchemaGraph(
        db_id="toy",
        tables=("t",),
        columns=((0, "a", "text"), (0, "b", "number")),
    )


def _train_pairs(schema, n=6):
    sqls = [
        "SELECT t.a FROM t",
        "SELECT t.b FROM t",
        "SELECT COUNT(*) FROM t",
        "SELECT t.a FROM t WHERE t.b > 1",
        "SELECT t.a FROM t ORDER BY t.b",
        "SELECT t.b FROM t ORDER BY t.b DESC LIMIT 1",
    ]
    return [
        AnnotatedPair(f"training question {i}?", sqls[i % len(sqls)], schema.db_id)
        for i in range(n)
    ]


def _aug(schema, question, sql):
    return SynthesizedExample(
        question=question,
        sql=sql,
        db_id=schema.db_id,
        entity_sequence=EntitySequence(db_name=schema.db_id, entities=(Entity("t", "a"),)),
        generator_score=-0.5,
        parser_score=-1.0,
    )


class TestTagAugmented:
    def test_prefix_applied(self, schema):
        tagged = tag_augmented(_aug(schema, "Who is the oldest?", "SELECT t.a FROM t"))
        assert tagged.question == "[AUG] Who is the oldest?"
        assert tagged.sql == "SELECT t.a FROM t"
        assert tagged.db_id == "toy"

    def test_double_tag_rejected(self, schema):
        once = _aug(schema, "[AUG] already tagged?", "SELECT t.a FROM t")
        with pytest.raises(ValueError, match="already"):
            tag_augmented(once)

    def test_empty_set_maps_to_empty(self):
        assert [tag_augmented(e) for e in []] == []


class TestBuildMixture:
    def test_weights_by_source(self, schema):
        config = TrainingMixtureConfig(alpha_train=0.3, alpha_new=0.1)
        train = _train_pairs(schema, 2)
        aug_t = [_aug(schema, "gen one?", "SELECT t.a FROM t")]
        aug_n = [_aug(schema, "gen two?", "SELECT t.b FROM t")]
        mix = build_training_mixture(train, aug_t, aug_n, config)
        assert [w.weight for w in mix] == [1.0, 1.0, 0.3, 0.1]
        assert [w.tagged for w in mix] == [False, False, True, True]

    def test_cardinality(self, schema):
        mix = build_training_mixture(
            _train_pairs(schema, 6),
            [_aug(schema, f"t{i}?", "SELECT t.a FROM t") for i in range(5)],
            [_aug(schema, f"n{i}?", "SELECT t.b FROM t") for i in range(3)],
        )
        assert len(mix) == 14

    def test_zero_weights_allowed(self, schema):
        config = TrainingMixtureConfig(alpha_train=0.0, alpha_new=0.0)
        mix = build_training_mixture(
            _train_pairs(schema, 1), [_aug(schema, "x?", "SELECT t.a FROM t")], [], config
        )
        assert mix[1].weight == 0.0

    def test_tag_only_on_augmented(self, schema):
        mix = build_training_mixture(
            _train_pairs(schema, 3), [_aug(schema, "gen?", "SELECT t.a FROM t")], []
        )
        for w in mix:
            assert w.tagged == w.pair.question.startswith("[AUG] ")

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            TrainingMixtureConfig(alpha_train=-0.1)
        with pytest.raises(ValueError):
            TrainingMixtureConfig(aug_token="")
        with pytest.raises(ValueError):
            TrainingMixtureConfig(mode="nonsense")


class TestTrainStudent:
    def test_zero_augmentation_reproduces_baseline_bitwise(self, schema):
        train = _train_pairs(schema)
        config = ParserTrainConfig(epochs=4, seed=13)
        baseline = train_parser(train, [schema], config)
        student = train_student(
            train, [], [], [schema],
            TrainingMixtureConfig(mode="weighted-joint"),
            parser_config=config,
        )
        assert baseline.train_log == student.train_log
        for a, b in zip(baseline.net.parameters(), student.net.parameters()):
            assert torch.equal(a, b)

    def test_weight_scaling_leaves_updates_unchanged(self, schema):
        # doubling every weight is exact in floating point, so the update
        # sequence must match bit for bit under the normalized reduction
        train = _train_pairs(schema)
        weights = [1.0, 0.5, 0.25, 1.0, 0.5, 0.25]
        config = ParserTrainConfig(epochs=3, seed=21)
        a = train_parser(train, [schema], config, weights=weights)
        b = train_parser(train, [schema], config, weights=[2.0 * w for w in weights])
        for pa, pb in zip(a.net.parameters(), b.net.parameters()):
            assert torch.equal(pa, pb)

    def test_combine_ignores_weights_and_tags(self, schema):
        train = _train_pairs(schema)
        aug = [_aug(schema, "extra question?", "SELECT t.a FROM t")]
        config = ParserTrainConfig(epochs=2, seed=3)
        combined = train_student(
            train, aug, [], [schema],
            TrainingMixtureConfig(mode="combine", alpha_train=0.0),
            parser_config=config,
        )
        # identical to training on the plain union, regardless of alphas
        union = train + [AnnotatedPair("extra question?", "SELECT t.a FROM t", "toy")]
        direct = train_parser(union, [schema], config)
        for a, b in zip(combined.net.parameters(), direct.net.parameters()):
            assert torch.equal(a, b)

    def test_pretrain_finetune_runs_both_phases(self, schema):
        train = _train_pairs(schema)
        aug = [_aug(schema, "pretrain question?", "SELECT t.b FROM t")]
        config = ParserTrainConfig(epochs=2, seed=5)
        model = train_student(
            train, aug, [], [schema],
            TrainingMixtureConfig(mode="pretrain-finetune"),
            parser_config=config,
        )
        assert model.trained
        # fine-tuned on originals after pretraining: logs come from phase 2
        assert len(model.train_log) == config.epochs

    def test_per_batch_weighted_mean_matches_hand_computation(self, schema):
        # one batch of three examples with distinct weights: the optimizer
        # step must see sum(w*nll)/sum(w) exactly
        from sqlsynth.parser import batch_weighted_loss, example_nlls

        train = _train_pairs(schema, 3)
        weights = [1.0, 0.3, 0.1]
        config = ParserTrainConfig(epochs=1, batch_size=3, seed=1)
        model = train_parser(train, [schema], config, weights=weights)
        nlls = example_nlls(model, train, [schema])
        by_hand = sum(w * n for w, n in zip(weights, nlls)) / sum(weights)
        auto = float(
            batch_weighted_loss(torch.tensor(nlls), torch.tensor(weights))
        )
        assert auto == pytest.approx(by_hand, rel=1e-6)

    def test_empty_mixture_rejected(self, schema):
        with pytest.raises(ValueError, match="empty"):
            train_student([], [], [], [schema], TrainingMixtureConfig())

import numpy as np
import pandas as pd
import pytest

from arguments.training_arguments import AblationSetting, Modality, Phase
from conftest import small_data_args, small_model_args, small_train_args
from data_synthesis.dataset_io import generate_dataset
from evaluation.experiments import Experiment
from modeling.configuration_mpl import MplConfig
from modeling.modeling_mpl import init_params, next_token_accuracy
from numeric.optim import AdamW
from prompts.prompt_bank import bank_init
from training.ablation import AblationResult, ablate, save_ablation
from training.early_stopping import EarlyStopping
from training.pipeline import build_model_config, phases_to_run, run_mpl
from training.trainer import (EvalResult, MplTrainer, batch_memory, collate, default_model_init, generate_title,
                              make_optimizer, mpt_step, prompt_parameters, prompt_prefix, train, upt_losses,
                              upt_step)
from utils.exceptions import ContractError


@pytest.fixture
def small_config(small_dataset):
    return build_model_config(small_model_args(), small_dataset, num_beams=2)


def _max_abs_difference(params, other):
    return max(float(np.abs(params[name].data - other[name].data).max()) for name in params)


# batches and memory layouts

def test_collate(small_dataset, small_config):
    records = small_dataset.train[:3]
    batch = collate(records, small_dataset.vocabulary, small_config, text_only_titles=[records[0].title] * 2)
    assert batch.image_features.shape == (3, 3, 8)
    assert len(batch) == 3 and batch.references == [record.title for record in records]
    assert (batch.title_ids[:, 0] == 1).all()
    assert all(2 in row for row in batch.title_ids)
    assert batch.attribute_ids.shape[1] == max(len(record.attributes) for record in records)
    assert batch.text_only_ids.shape == (2, batch.title_ids.shape[1])
    with pytest.raises(ContractError):
        collate([], small_dataset.vocabulary, small_config)


def test_prompt_prefix_rows(tiny_config, tiny_model):
    _, bank = tiny_model
    assert prompt_prefix(bank, AblationSetting.BASE, tiny_config) is None
    rows = {setting: prompt_prefix(bank, setting, tiny_config).shape[0]
            for setting in AblationSetting if setting != AblationSetting.BASE}
    assert rows == {AblationSetting.A: 2, AblationSetting.B: 2, AblationSetting.C: 2, AblationSetting.D: 6,
                    AblationSetting.MPL: 18}
    np.testing.assert_array_equal(prompt_prefix(bank, AblationSetting.C, tiny_config).data, bank.title.data)


def test_memory_layout(small_dataset, small_config):
    params, bank = init_params(small_config, 0), bank_init(small_config, 1)
    batch = collate(small_dataset.train[:4], small_dataset.vocabulary, small_config)
    attribute_len = batch.attribute_ids.shape[1]
    memory, mask = batch_memory(batch, params, bank, small_config, AblationSetting.MPL)
    assert memory.shape == (4, 9 * 2 + 3 + attribute_len, 16)
    assert mask.shape == memory.shape[:2]
    np.testing.assert_allclose(mask[:, :18], -np.log(9.0))
    assert (mask[:, 18:21] == 0.0).all()
    np.testing.assert_array_equal(mask[:, 21:] == 0.0, batch.attribute_ids != small_config.pad_token_id)
    # prompt rows enter the memory layer-normed
    np.testing.assert_allclose(memory.data[:, :18].mean(axis=-1), 0.0, atol=1e-5)
    _, mask = batch_memory(batch, params, bank, small_config, AblationSetting.D)
    np.testing.assert_allclose(mask[:, :6], -np.log(3.0))
    _, mask = batch_memory(batch, params, bank, small_config, AblationSetting.A)
    assert (mask[:, :5] == 0.0).all()
    memory, mask = batch_memory(batch, params, bank, small_config, AblationSetting.BASE)
    assert memory.shape == (4, 3 + attribute_len, 16) and mask.shape == memory.shape[:2]


# training objectives

def test_unimodal_loss_weights(small_dataset, small_config):
    params, bank = init_params(small_config, 0), bank_init(small_config, 1)
    batch = collate(small_dataset.train[:4], small_dataset.vocabulary, small_config)
    only_image = {Modality.IMAGE: 1.0, Modality.ATTRIBUTE: 0.0, Modality.TITLE: 0.0}
    losses, full = upt_losses(batch, params, bank, small_config, AblationSetting.MPL, only_image)
    assert set(losses) == set(Modality)
    assert full.item() == pytest.approx(losses[Modality.IMAGE].item())
    losses, _ = upt_losses(batch, params, bank, small_config, AblationSetting.B, only_image)
    assert set(losses) == {Modality.ATTRIBUTE}
    with pytest.raises(ContractError):
        upt_losses(batch, params, bank, small_config, AblationSetting.BASE, only_image)


def test_unimodal_steps_reduce_the_full_loss(small_dataset, small_config):
    params, bank = init_params(small_config, 0), bank_init(small_config, 1)
    args = small_train_args(ablation_setting="d")
    optimizer = make_optimizer(args, params, prompt_parameters(bank, list(Modality)))
    batch = collate(small_dataset.train[:8], small_dataset.vocabulary, small_config)
    steps = [upt_step(batch, params, bank, small_config, AblationSetting.D, args.lambdas, optimizer)
             for _ in range(30)]
    assert None not in (steps[0].image, steps[0].attribute, steps[0].title)
    assert steps[-1].full < steps[0].full
    assert all(distance > 0 for distance in bank.distance_to(bank_init(small_config, 1)).values())


def test_multimodal_steps_leave_frozen_prompts_alone(small_dataset, small_config):
    params, bank = init_params(small_config, 0), bank_init(small_config, 1)
    before = bank.copy()
    optimizer = make_optimizer(small_train_args(learning_rate=1e-3), params)
    batch = collate(small_dataset.train[:8], small_dataset.vocabulary, small_config)
    losses = [mpt_step(batch, params, bank, small_config, AblationSetting.MPL, optimizer) for _ in range(30)]
    assert losses[-1] < losses[0]
    assert all(distance == 0.0 for distance in before.distance_to(bank).values())


def test_phases_to_run():
    assert phases_to_run(small_train_args(phase="mpl")) == [Phase.UPT, Phase.MPT]
    assert phases_to_run(small_train_args(phase="mpl", ablation_setting="base")) == [Phase.MPT]
    assert phases_to_run(small_train_args(phase="upt")) == [Phase.UPT]


# the trainer

def test_unimodal_training_moves_only_the_active_bank(small_dataset, small_config):
    args = small_train_args(ablation_setting="a")
    trainer = MplTrainer(args, small_config, small_dataset.vocabulary, small_dataset.train[:16],
                         small_dataset.validation[:4], model_init=default_model_init(small_config, 0))
    initial_params, initial_bank = trainer.params.copy(), trainer.bank.copy()
    trainer.train(Phase.UPT, num_epochs=1)
    distances = initial_bank.distance_to(trainer.bank)
    assert distances["prompt_bank.image"] > 0
    assert distances["prompt_bank.attribute"] == 0.0 and distances["prompt_bank.title"] == 0.0
    assert _max_abs_difference(initial_params, trainer.params) > 0


def test_early_stopping():
    stopping = EarlyStopping(patience=2)
    assert stopping.update(1.0, 1) and not stopping.update(0.9, 2) and not stopping.should_stop
    assert not stopping.update(1.0, 3) and stopping.should_stop
    assert (stopping.best_metric, stopping.best_epoch) == (1.0, 1)

    stopping = EarlyStopping(patience=1, threshold=0.1)
    stopping.update(1.0, 1)
    assert not stopping.update(1.05, 2)
    assert EarlyStopping(patience=1, threshold=0.1).update(-1.0, 1)


def test_trainer_restores_the_best_epoch(monkeypatch, small_dataset, small_config):
    scores, snapshots = [1.0, 0.5, 2.0], []

    def fake_evaluate(self, records, num_beams, phase=Phase.MPT.value):
        snapshots.append(self.params.copy())
        return EvalResult({"bleu4": 0.0, "rouge_l": 0.0, "cider": scores[len(snapshots) - 1]}, [])

    monkeypatch.setattr(MplTrainer, "evaluate", fake_evaluate)
    args = small_train_args(early_stopping_patience=1, num_train_epochs=5)
    params, _, report = train(args, small_config, small_dataset.vocabulary, small_dataset.train[:16],
                              small_dataset.validation[:4], default_model_init(small_config, 0))
    assert len(report.epochs) == 2 and report.stopped_early
    assert report.best_epoch == 1 and report.best_validation_cider == 1.0
    assert [epoch.improved for epoch in report.epochs] == [True, False]
    assert _max_abs_difference(params, snapshots[0]) == 0.0
    assert _max_abs_difference(params, snapshots[1]) > 0.0


def test_trainer_contracts(small_dataset, small_config):
    args = small_train_args()
    model_init = default_model_init(small_config, 0)
    with pytest.raises(ContractError):
        MplTrainer(args, small_config, small_dataset.vocabulary, [], small_dataset.validation[:4],
                   model_init=model_init)
    with pytest.raises(ContractError):
        MplTrainer(args, small_config, small_dataset.vocabulary, small_dataset.train, small_dataset.validation[:1],
                   model_init=model_init)
    with pytest.raises(ContractError):
        MplTrainer(small_train_args(ablation_setting="base"), small_config, small_dataset.vocabulary,
                   small_dataset.train, small_dataset.validation[:4], model_init=model_init).train(Phase.UPT)


# the few-shot pipeline

def test_training_is_reproducible(small_dataset):
    first = run_mpl(small_train_args(), small_model_args(), small_dataset, max_eval_samples=6, max_predict_samples=6)
    second = run_mpl(small_train_args(), small_model_args(), small_dataset, max_eval_samples=6,
                     max_predict_samples=6)
    for phase in ("upt", "mpt"):
        assert first.report.phase(phase).loss_trace == second.report.phase(phase).loss_trace
    assert _max_abs_difference(first.params, second.params) == 0.0
    assert first.report.test_metrics == second.report.test_metrics


def test_separate_phases_match_a_full_run(small_dataset):
    kwargs = dict(max_eval_samples=6, max_predict_samples=6)
    full = run_mpl(small_train_args(), small_model_args(), small_dataset, **kwargs)
    upt = run_mpl(small_train_args(phase="upt"), small_model_args(), small_dataset, **kwargs)
    mpt = run_mpl(small_train_args(phase="mpt"), small_model_args(), small_dataset,
                  init=(upt.params, upt.prompt_bank), **kwargs)
    assert _max_abs_difference(full.params, mpt.params) == 0.0
    assert all(distance == 0.0 for distance in full.prompt_bank.distance_to(mpt.prompt_bank).values())
    assert full.report.test_metrics == mpt.report.test_metrics


def test_run_report(small_dataset):
    run = run_mpl(small_train_args(), small_model_args(), small_dataset, max_eval_samples=6, max_predict_samples=6)
    report = run.report
    assert [phase.phase for phase in report.phases] == ["upt", "mpt"]
    assert report.num_fewshot_examples == 9  # ceil(0.1 * 84)
    assert set(report.test_metrics) == {"bleu4", "rouge_l", "cider"}
    assert len(report.test_predictions) == 6
    for phase in report.phases:
        assert 1 <= len(phase.epochs) <= 2 and phase.best_epoch in (1, 2)
        assert phase.best_validation_cider == max(epoch.validation["cider"] for epoch in phase.epochs)
    assert set(report.phase("upt").loss_trace[0]) == {"image", "attribute", "title", "full"}
    assert report.best_validation_cider == report.phase("mpt").best_validation_cider
    assert run.optimizer_state.step > 0
    assert report.to_dict()["phases"][1]["phase"] == "mpt"


def test_full_training_split(small_dataset):
    args = small_train_args(fewshot_fraction=1.0, num_train_epochs=1, phase="mpt")
    report = run_mpl(args, small_model_args(), small_dataset, max_eval_samples=4, max_predict_samples=4).report
    assert report.num_fewshot_examples == len(small_dataset.train)


def test_base_trains_no_prompts(small_dataset):
    args = small_train_args(ablation_setting="base", num_train_epochs=1)
    config = build_model_config(small_model_args(), small_dataset, args.num_beams)
    initial_bank = bank_init(config, args.seed + 1)
    run = run_mpl(args, small_model_args(), small_dataset, max_eval_samples=4, max_predict_samples=4)
    assert [phase.phase for phase in run.report.phases] == ["mpt"]
    assert run.report.phases[0].num_trainable_parameters == run.params.num_parameters()
    assert all(distance == 0.0 for distance in initial_bank.distance_to(run.prompt_bank).values())


def test_unimodal_training_is_validated_on_the_plain_banks(small_dataset):
    assert AblationSetting.MPL.upt_layout is AblationSetting.D and AblationSetting.A.upt_layout is AblationSetting.A
    runs = {setting: run_mpl(small_train_args(phase="upt", ablation_setting=setting), small_model_args(),
                             small_dataset, max_eval_samples=6, max_predict_samples=6)
            for setting in ["d", "mpl"]}
    d, mpl = runs["d"].report, runs["mpl"].report
    assert [phase.phase for phase in mpl.phases] == ["upt"] and mpl.phases[0].setting == "mpl"
    assert [epoch.validation for epoch in mpl.phases[0].epochs] == [epoch.validation for epoch in d.phases[0].epochs]
    assert mpl.phases[0].best_epoch == d.phases[0].best_epoch and mpl.test_metrics == d.test_metrics
    assert _max_abs_difference(runs["mpl"].params, runs["d"].params) == 0.0
    assert all(distance == 0.0 for distance in runs["mpl"].prompt_bank.distance_to(runs["d"].prompt_bank).values())


def test_source_pretraining(small_dataset):
    dataset = generate_dataset(small_data_args(generate_source_domain=True, source_num_products=40))
    args = small_train_args(pretrain_on_source=True, source_num_train_epochs=1, num_train_epochs=1)
    report = run_mpl(args, small_model_args(), dataset, max_eval_samples=4, max_predict_samples=4).report
    assert [phase.phase for phase in report.phases] == ["source", "upt", "mpt"]
    assert report.phases[0].setting == "base" and report.phases[0].num_train_examples == 32
    with pytest.raises(ContractError):
        run_mpl(args, small_model_args(), small_dataset)


def test_generate_title(small_dataset, small_config):
    params, bank = init_params(small_config, 0), bank_init(small_config, 1)
    record = small_dataset.test[0]
    title = generate_title(record, params, bank, small_config, AblationSetting.MPL, small_dataset.vocabulary)
    assert title == generate_title(record, params, bank, small_config, AblationSetting.MPL,
                                   small_dataset.vocabulary)
    assert not any(token.startswith("<") for token in title.split())
    assert len(title.split()) <= small_config.max_title_len - 1


def test_multimodal_training_memorizes_a_small_set(small_dataset):
    records = small_dataset.train[:32]
    config = MplConfig.from_preset("desk", vocab_size=len(small_dataset.vocabulary), image_seq_len=3,
                                   image_feature_dim=8, dropout=0.0)
    params, bank = init_params(config, 0), bank_init(config, 1)
    bank.requires_grad_(False)
    optimizer = AdamW(dict(params), learning_rate=1e-3, weight_decay=0.0)
    batch = collate(records, small_dataset.vocabulary, config)
    accuracy = 0.0
    for step in range(1, 501):
        mpt_step(batch, params, bank, config, AblationSetting.MPL, optimizer)
        if step % 25 == 0:
            memory, mask = batch_memory(batch, params, bank, config, AblationSetting.MPL)
            accuracy = next_token_accuracy(memory, batch.title_ids, params, config, mask)
            if accuracy >= 0.95:
                break
    assert accuracy >= 0.95


# ablation

def test_quick_ablation(tmp_path, small_dataset):
    result = ablate(small_dataset, small_model_args(), small_train_args(num_train_epochs=1),
                    settings=[AblationSetting.BASE, AblationSetting.MPL], num_seeds=1, fractions=[0.1],
                    max_eval_samples=4, max_predict_samples=4)
    assert list(result.runs.setting) == ["base", "mpl"]
    assert list(result.table.index) == ["Base", "MPL"]
    assert result.table.shape[1] == 3
    written = save_ablation(result, tmp_path, {"train": {"seed": 42}})
    for name in ["experiment_ablation.txt", "experiment_ablation.csv", "ablation_runs.csv", "ablation_report.txt",
                 "ablation_config.yaml"]:
        assert tmp_path / name in written and (tmp_path / name).exists()


def _synthetic_result(medians):
    rows = [{"fraction": 0.01, "setting": setting, "seed": seed, "bleu4": 0.0, "rouge_l": 0.0,
             "cider": value + offset}
            for setting, value in medians.items() for seed, offset in enumerate([-0.1, 0.0, 0.1])]
    return AblationResult(pd.DataFrame(rows), pd.DataFrame(), Experiment())


def test_ordering_checks():
    holds = _synthetic_result({"base": 1.0, "a": 1.1, "b": 1.2, "c": 1.3, "d": 1.5, "mpl": 1.8})
    assert holds.ordering_holds(0.01) and holds.language_prompts_dominate(0.01)
    assert holds.medians(0.01)["mpl"] == pytest.approx(1.8)
    broken = _synthetic_result({"base": 1.0, "a": 1.1, "b": 1.2, "c": 1.3, "d": 1.9, "mpl": 1.8})
    assert not broken.ordering_holds(0.01)
    assert _synthetic_result({"base": 1.0, "mpl": 1.8}).language_prompts_dominate(0.01) is None


@pytest.mark.slow
def test_full_ablation_ordering(small_dataset):
    dataset = generate_dataset(small_data_args(num_products=2000, image_seq_len=5, image_feature_dim=32))
    result = ablate(dataset, small_model_args(d_model=64, num_attention_heads=4, num_encoder_layers=2,
                                              num_decoder_layers=2, ffn_dim=128, num_prompts=8),
                    small_train_args(num_train_epochs=20, early_stopping_patience=3, num_beams=3),
                    num_seeds=5, fractions=[0.01], max_eval_samples=100, max_predict_samples=200)
    assert result.ordering_holds(0.01)
    assert result.language_prompts_dominate(0.01)

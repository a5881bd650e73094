"""The assembled network: shapes, parameter groups and end-to-end gradients."""

import math

import pytest
import torch

from fimrec.config import RunConfig, SyntheticConfig, build_config
from fimrec.data import generate_synthetic
from fimrec.embeddings import Encoder
from fimrec.model import GROUPS, SIDE_SOURCES, FimModel, parameter_group
from fimrec.numerics import grad_check
from fimrec.prediction import bce_loss, bce_per_task

SMALL = {
    "max_len": "18",
    "mss.attention_hidden": "8",
    "mss.top_k": "4",
    "mmoe.experts": "2",
}


def _config(**overrides):
    return build_config(RunConfig, {**SMALL, **overrides})


def _toy(cfg, users=4):
    toy = SyntheticConfig(n_users=users, seq_len=18, samples_per_user=1, seed=0)
    samples = generate_synthetic(toy).samples
    encoder = Encoder.fit(samples, cfg.max_len, cfg.price_buckets, cfg.mmoe.tasks)
    return encoder, encoder.encode(samples)


def _model(cfg, encoder, seed=0):
    torch.manual_seed(seed)
    return FimModel(encoder, cfg)


def test_forward_gives_one_probability_per_task():
    cfg = _config()
    encoder, batch = _toy(cfg)
    probs = _model(cfg, encoder)(batch)
    assert probs.shape == (4, 2)
    assert probs.dtype == torch.float64


def test_initial_loss_is_log_two_per_task():
    cfg = _config()
    encoder, batch = _toy(cfg)
    losses = bce_per_task(_model(cfg, encoder)(batch), batch.labels)
    assert torch.allclose(losses, torch.full((2,), math.log(2), dtype=torch.float64))


def test_fused_width_is_the_sequence_width():
    cfg = _config()
    encoder, batch = _toy(cfg)
    model = _model(cfg, encoder)
    assert model.fused(batch).shape == (4, model.embedder.width)
    assert model.embedder.width == 36


def test_every_parameter_has_a_group():
    cfg = _config()
    encoder, _ = _toy(cfg)
    groups = _model(cfg, encoder).grouped_parameters()
    assert tuple(groups) == GROUPS
    assert all(groups[group] for group in GROUPS)
    assert set(groups["heads"]) == {
        "mmoe.heads.0.weight",
        "mmoe.heads.0.bias",
        "mmoe.heads.1.weight",
        "mmoe.heads.1.bias",
    }


def test_side_sources_name_real_parameters():
    cfg = _config()
    encoder, _ = _toy(cfg)
    names = dict(_model(cfg, encoder).named_parameters())
    assert set(SIDE_SOURCES.values()) <= set(names)


def test_unknown_parameter_group():
    with pytest.raises(ValueError, match="no group"):
        parameter_group("bogus.weight")


def test_without_fpem_the_frequency_groups_are_empty():
    cfg = _config(**{"fpem.enabled": "false"})
    encoder, batch = _toy(cfg)
    model = _model(cfg, encoder)
    groups = model.grouped_parameters()
    assert groups["fpem"] == {} and groups["side_info"] == {}
    assert model(batch).shape == (4, 2)
    with pytest.raises(ValueError, match="FPEM"):
        model.side_info(batch)


def test_task_mismatch_is_rejected():
    cfg = _config()
    encoder, _ = _toy(cfg)
    with pytest.raises(ValueError, match="predicts"):
        FimModel(encoder, _config(**{"mmoe.tasks": "purchase"}))


@pytest.mark.parametrize(
    "overrides",
    [
        {},
        {"fpem.enabled": "false"},
        {"mss.views": "none"},
        {"mss.views": "none", "mss.view_attrs": "own"},
        {"mss.search_mode": "soft", "mss.view_attrs": "own"},
        {"fpem.mode": "butter", "fpem.fusion": "direct"},
    ],
)
def test_variants_run(overrides):
    cfg = _config(**overrides)
    encoder, batch = _toy(cfg)
    probs = _model(cfg, encoder)(batch)
    assert bool(torch.isfinite(probs).all())


def _check(cfg):
    encoder, batch = _toy(cfg)
    model = _model(cfg, encoder)
    model.randomize_heads(torch.Generator().manual_seed(0))
    params = dict(model.named_parameters())
    report = grad_check(
        lambda: bce_loss(model(batch), batch.labels),
        params,
        max_coords=8,
        kink_tol=1e-4,
    )
    return report, params


def test_full_pipeline_gradients_match_finite_differences():
    report, params = _check(_config())
    assert report.max_error < 1e-4
    stopped = {source for name, source in SIDE_SOURCES.items() if name != "pay_len"}
    assert report.exempt == stopped
    assert set(report.errors) == set(params)
    assert report.errors["embedder.tables.brand.weight"] < 1e-4
    assert report.errors["embedder.tables.price.weight"] < 1e-4


def test_gradients_with_side_info_gradient_flow():
    report, params = _check(_config(**{"fpem.sideinfo": "grad"}))
    assert report.max_error < 1e-4
    assert report.exempt == frozenset()
    assert set(report.errors) == set(params)


def test_soft_search_gradients():
    report, _ = _check(_config(**{"mss.search_mode": "soft"}))
    assert report.max_error < 1e-4

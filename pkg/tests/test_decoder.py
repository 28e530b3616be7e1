import numpy as np
import pytest
import torch

from conftest import small_model, toy_items
from visualtts.decoder import AcousticDecoder, VisualFusion, ZoneoutLSTMCell, video_index
from visualtts.errors import DataError, StopContractError, ValidationError
from visualtts.training import grad_check, teacher_forced_forward


@pytest.mark.parametrize("t, t_v, expected", [(0, 5, 0), (7, 5, 1), (19, 5, 4), (20, 5, 4), (55, 14, 13), (56, 14, 13)])
def test_video_index(t, t_v, expected):
    assert video_index(t, t_v) == expected


def test_video_index_negative():
    with pytest.raises(ValidationError):
        video_index(-1, 3)


@pytest.fixture
def fusion():
    torch.manual_seed(0)
    return VisualFusion().eval()


def test_fusion_zero(fusion):
    with torch.no_grad():
        for m in fusion.modules():
            if isinstance(m, torch.nn.Linear):
                m.bias.zero_()
        out = fusion(torch.zeros(1, 80), torch.zeros(1, 512), torch.zeros(1, 64))
    assert out.shape == (1, 256)
    assert not out.any()


def test_fusion_eval_deterministic(fusion):
    args = torch.randn(1, 80), torch.randn(1, 512), torch.randn(1, 64)
    assert torch.equal(fusion(*args), fusion(*args))


def test_fusion_dropout_only_in_training(fusion):
    args = torch.randn(4, 80), torch.randn(4, 512), torch.randn(4, 64)
    fusion.train()
    torch.manual_seed(1)
    a = fusion(*args)
    torch.manual_seed(2)
    b = fusion(*args)
    assert not torch.equal(a, b)


def test_fusion_speaker_is_additive(fusion):
    prev, alpha = torch.randn(1, 80), torch.randn(1, 512)
    g1, g2 = torch.randn(1, 64), torch.randn(1, 64)
    diff = fusion(prev, alpha, g1) - fusion(prev, alpha, g2)
    torch.testing.assert_close(diff, fusion.speaker(g1) - fusion.speaker(g2))


def test_fusion_shape_errors(fusion):
    with pytest.raises(ValidationError):
        fusion(torch.randn(1, 79), torch.randn(1, 512), torch.randn(1, 64))
    with pytest.raises(ValidationError):
        fusion(torch.randn(1, 80), torch.randn(1, 100), torch.randn(1, 64))


def _sigmoid(x):
    return 1 / (1 + np.exp(-x))


def test_zoneout_expectation_hand_computed():
    cell = ZoneoutLSTMCell(1, 2, zoneout=0.1).eval()
    w_ih = np.array([[0.5], [-0.3], [0.2], [0.1], [0.4], [0.0], [-0.6], [0.7]])
    w_hh = np.array(
        [[0.1, 0.2], [0.0, -0.1], [0.3, 0.1], [-0.2, 0.2], [0.5, -0.5], [0.1, 0.1], [0.2, 0.0], [0.0, 0.3]]
    )
    b = np.array([0.1, -0.1, 0.0, 0.2, 0.0, 0.1, -0.2, 0.05])
    with torch.no_grad():
        cell.weight_ih.copy_(torch.tensor(w_ih))
        cell.weight_hh.copy_(torch.tensor(w_hh))
        cell.bias_ih.copy_(torch.tensor(b))
        cell.bias_hh.zero_()
    x = np.array([0.7])
    h0, c0 = np.array([0.3, -0.4]), np.array([0.5, 0.2])
    z = w_ih @ x + w_hh @ h0 + b
    i, f, g, o = _sigmoid(z[0:2]), _sigmoid(z[2:4]), np.tanh(z[4:6]), _sigmoid(z[6:8])
    c_new = f * c0 + i * g
    h_new = o * np.tanh(c_new)
    with torch.no_grad():
        h, c = cell(torch.tensor(x, dtype=torch.float32)[None], (torch.tensor(h0, dtype=torch.float32)[None], torch.tensor(c0, dtype=torch.float32)[None]))
    np.testing.assert_allclose(h[0].numpy(), 0.9 * h_new + 0.1 * h0, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(c[0].numpy(), 0.9 * c_new + 0.1 * c0, rtol=1e-6, atol=1e-7)


def test_zoneout_training_keeps_or_updates():
    torch.manual_seed(0)
    cell = ZoneoutLSTMCell(3, 64, zoneout=0.5).train()
    h0, c0 = torch.randn(1, 64), torch.randn(1, 64)
    x = torch.randn(1, 3)
    h_new, _ = torch.nn.LSTMCell.forward(cell, x, (h0, c0))
    h, _ = cell(x, (h0, c0))
    kept = torch.isclose(h, h0)
    updated = torch.isclose(h, h_new)
    assert (kept | updated).all() and kept.any() and updated.any()


@pytest.fixture
def decoder():
    torch.manual_seed(0)
    return AcousticDecoder().eval()


def test_decode_step_contract(decoder):
    memory = decoder.prepare_memory(torch.randn(1, 5, 128))
    state = decoder.init_state(1, limit=2)
    pair, state, align, stop = decoder.decode_step(state, torch.randn(1, 256), memory)
    assert pair.shape == (1, 2, 80)
    assert state.step_index == 1
    assert stop is None
    assert abs(align.sum().item() - 1.0) < 1e-5 and (align >= 0).all()
    assert state.attention_rnn_hidden.shape == (1, 256)
    assert [h.shape for h in state.lstm_hiddens] == [(1, 256), (1, 256)]
    assert state.attention_context.shape == (1, 128)
    decoder.decode_step(state, torch.randn(1, 256), memory)
    state.step_index = 2
    with pytest.raises(StopContractError):
        decoder.decode_step(state, torch.randn(1, 256), memory)


def test_single_memory_row_alignment_is_one(decoder):
    memory = decoder.prepare_memory(torch.randn(1, 1, 128))
    state = decoder.init_state(1)
    for _ in range(3):
        _, state, align, _ = decoder.decode_step(state, torch.randn(1, 256), memory)
        assert align.tolist() == [[1.0]]


@pytest.mark.parametrize("t_v", [1, 2, 7, 14])
def test_synthesize_length_lock(t_v):
    model = small_model()
    rng = np.random.default_rng(t_v)
    syn = model.synthesize([3, 4, 39], 0, alpha=rng.normal(size=(t_v, model.config.visual_dim)))
    assert syn.mel.shape == (4 * t_v, 80)
    assert syn.decoder_alignments.shape == (2 * t_v, 3)
    # the visual frame fed at step s is that of mel frame 2s
    assert syn.visual_indices == [min(2 * s // 4, t_v - 1) for s in range(2 * t_v)]


def test_synthesize_full_size_fourteen_frames():
    torch.manual_seed(0)
    from visualtts.model import ModelConfig, VisualTTSModel

    model = VisualTTSModel(ModelConfig(n_speakers=2)).eval()
    syn = model.synthesize([1, 2, 3, 39], 1, alpha=np.random.default_rng(0).normal(size=(14, 512)))
    assert syn.mel.shape == (56, 80)
    assert np.allclose(syn.decoder_alignments.sum(-1), 1.0, atol=1e-5)
    assert np.allclose(syn.tva_weights.sum(-1), 1.0, atol=1e-5)


def test_synthesize_eval_bit_identical():
    model = small_model()
    alpha = np.random.default_rng(1).normal(size=(6, model.config.visual_dim))
    a = model.synthesize([5, 6, 39], 1, alpha=alpha)
    b = model.synthesize([5, 6, 39], 1, alpha=alpha)
    assert a.mel.tobytes() == b.mel.tobytes()


def test_baseline_decoding_capped():
    model = small_model("tacotron")
    syn = model.synthesize([5, 6, 39], 1, max_decoder_steps=7)
    assert syn.mel.shape[0] <= 14 and syn.mel.shape[0] % 2 == 0


def test_teacher_forced_shapes():
    model = small_model()
    items = toy_items(0, 2)
    preds, targets = teacher_forced_forward(model, items)
    for p, t, it in zip(preds, targets, items):
        assert p.shape == t.shape == it["mel"].shape


def test_teacher_forced_ratio_violation():
    model = small_model()
    item = toy_items(0, 1)[0]
    item["mel"] = item["mel"][:-4]
    with pytest.raises(DataError, match=item["utt_id"]):
        teacher_forced_forward(model, [item])


def test_zero_targets_zero_head_zero_loss():
    model = small_model()
    item = toy_items(0, 1)[0]
    item["mel"] = np.zeros_like(item["mel"])
    with torch.no_grad():
        model.decoder.mel_head.weight.zero_()
        model.decoder.mel_head.bias.zero_()
    preds, targets = teacher_forced_forward(model, [item])
    assert float((preds[0] - targets[0]).detach().abs().mean()) == 0.0


def test_batched_teacher_forcing_matches_single():
    model = small_model()
    items = toy_items(3, 3)
    preds, _ = teacher_forced_forward(model, items)
    for i, it in enumerate(items):
        single, _ = teacher_forced_forward(model, [it])
        torch.testing.assert_close(preds[i], single[0], rtol=1e-4, atol=1e-5)


@pytest.mark.parametrize("component", ["fusion", "decoder_step", "end_to_end_tiny"])
def test_gradient_checks(component):
    assert grad_check(component) < 1e-3

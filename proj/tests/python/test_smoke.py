import itertools
import json
import math
from pathlib import Path

import numpy as np
import pytest

import realdesc

ASSETS = Path(__file__).resolve().parents[2] / "assets"


def test_benchmarks_and_class_counts():
    counts = {name: len(realdesc.class_list(name)) for name in realdesc.benchmarks()}
    assert counts == {"cub": 200, "flowers102": 102, "cars196": 196, "food101": 101, "dogs120": 120, "oxfordpets": 37}
    with pytest.raises(realdesc.RealdescError, match="valid names"):
        realdesc.class_list("imagenet")


def test_filter_name_removes_casing_variants():
    out = realdesc.filter_name("American Crow", "An AMERICAN-crow is black.", "bird")
    assert "crow" not in out.lower()
    assert out == "A bird is black."


def test_shipped_descriptions_certify():
    files = sorted((ASSETS / "descriptions").glob("*_oxford.json")) + sorted(
        (ASSETS / "descriptions").glob("*_columbia.json"))
    assert len(files) == 12
    for f in files:
        report = realdesc.verify_file(f)
        assert report["certified"], f.name
        assert report["sentences_checked"] > 0


def test_classify_matches_numpy_argmax():
    rng = np.random.default_rng(0)
    for _ in range(50):
        protos = rng.standard_normal((7, 12)).astype(np.float32)
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        img = rng.standard_normal(12).astype(np.float32)
        cos = protos @ img / np.linalg.norm(img)
        assert realdesc.classify(img, protos) == int(np.argmax(cos))


def test_top_k_matches_exhaustive_search():
    rng = np.random.default_rng(1)
    for _ in range(200):
        scores = list(rng.random(7))
        k = int(rng.integers(1, 4))
        best = max(itertools.combinations(range(7), k), key=lambda s: sum(scores[i] for i in s))
        assert set(realdesc.top_k_indices(scores, k)) == set(best)


def test_unique_class_batches_have_no_duplicates():
    classes = [c for c in range(100) for _ in range(3)]
    batches = realdesc.unique_class_batches(classes, 32, 5, 3)
    assert batches
    for b in batches:
        assert len({classes[i] for i in b}) == len(b) == 32


def test_contrastive_loss_equal_similarities_is_log_n():
    x = np.ones((6, 4), dtype=np.float32) / 2.0
    assert realdesc.contrastive_loss(x, x, 0.07) == pytest.approx(math.log(6), rel=1e-5)


def test_tiny_backbone_shapes():
    bb = realdesc.Backbone.load("tiny")
    emb = bb.encode_texts(["a red bird", "a blue bird"])
    assert emb.shape == (2, bb.embed_dim)
    px = np.random.default_rng(2).standard_normal((3, 3, bb.image_size, bb.image_size)).astype(np.float32)
    assert bb.encode_pixels(px).shape == (3, bb.embed_dim)


def _hf_config(cfg, eos):
    from transformers import CLIPConfig

    v, t = cfg["vision"], cfg["text"]
    return CLIPConfig(
        vision_config=dict(image_size=v["image_size"], patch_size=v["patch_size"], hidden_size=v["width"],
                           num_hidden_layers=v["layers"], num_attention_heads=v["heads"],
                           intermediate_size=v["mlp_dim"], hidden_act=cfg["hidden_act"],
                           layer_norm_eps=cfg["layer_norm_eps"]),
        text_config=dict(vocab_size=t["vocab_size"], max_position_embeddings=t["context_length"],
                         hidden_size=t["width"], num_hidden_layers=t["layers"], num_attention_heads=t["heads"],
                         intermediate_size=t["mlp_dim"], hidden_act=cfg["hidden_act"],
                         layer_norm_eps=cfg["layer_norm_eps"], eos_token_id=eos, bos_token_id=eos - 1,
                         pad_token_id=0),
        projection_dim=cfg["embed_dim"],
    )


def test_parity_with_reference_clip_implementation(tmp_path):
    torch = pytest.importorskip("torch")
    pytest.importorskip("transformers")
    from safetensors.torch import load_file
    from transformers import CLIPModel

    bb = realdesc.Backbone.load("tiny")
    bb.save(tmp_path)
    cfg = json.loads(bb.config)
    ids, eos_pos = bb.token_batch(["a small red bird with a long tail", "creature"])
    eos = int(ids[0, eos_pos[0]])

    ref = CLIPModel(_hf_config(cfg, eos)).eval()
    state = load_file(str(tmp_path / "model.safetensors"))
    missing, unexpected = ref.load_state_dict(state, strict=False)
    assert not unexpected
    assert all("position_ids" in k for k in missing)

    px = np.random.default_rng(3).standard_normal((2, 3, bb.image_size, bb.image_size)).astype(np.float32)
    with torch.no_grad():
        pooled = ref.vision_model(pixel_values=torch.from_numpy(px)).pooler_output
        want_img = ref.visual_projection(pooled).numpy()
        text_out = ref.text_model(input_ids=torch.from_numpy(ids))
        want_txt = ref.text_projection(text_out.pooler_output).numpy()
    np.testing.assert_allclose(bb.encode_pixels(px), want_img, rtol=1e-4, atol=1e-5)
    got_txt = bb.encode_texts(["a small red bird with a long tail", "creature"])
    np.testing.assert_allclose(got_txt, want_txt, rtol=1e-4, atol=1e-5)

import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hierec.config import ModelConfig
from hierec.data import NewsArticle
from hierec.news_encoder import (
    AttentivePool,
    MultiHeadSelfAttention,
    NewsEncoder,
    attentive_pool,
    encode_entities,
    encode_news,
    encode_text,
    masked_softmax,
    multi_head_self_attention,
)

from .conftest import TINY_MODEL

CFG = ModelConfig(**TINY_MODEL, max_title_len=6, max_entities=3)


@pytest.fixture(autouse=True)
def _double():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def encoder(seed=0, dropout=0.2):
    torch.manual_seed(seed)
    return NewsEncoder(12, 6, CFG, dropout=dropout)


def article(words, ents=(), nid="N"):
    w = list(words) + [0] * (CFG.max_title_len - len(words))
    e = list(ents) + [0] * (CFG.max_entities - len(ents))
    return NewsArticle(nid, 0, 0, np.array(w), np.array(e))


def attention_oracle(x, layer):
    """Per-head softmax(q k^T) v written out with numpy loops."""
    wq, wk, wv = (m.weight.detach().numpy() for m in (layer.query, layer.key, layer.value))
    L = x.shape[0]
    out = []
    for h in range(layer.n_heads):
        sl = slice(h * layer.head_dim, (h + 1) * layer.head_dim)
        q, k, v = x @ wq[sl].T, x @ wk[sl].T, x @ wv[sl].T
        rows = []
        for i in range(L):
            logits = np.array([q[i] @ k[j] for j in range(L)])
            w = np.exp(logits - logits.max())
            w /= w.sum()
            rows.append(sum(w[j] * v[j] for j in range(L)))
        out.append(np.stack(rows))
    return np.concatenate(out, axis=1)


def test_attention_matches_dense_oracle():
    torch.manual_seed(3)
    layer = MultiHeadSelfAttention(4, 1, 4)
    x = torch.randn(3, 4)
    got = multi_head_self_attention(x, torch.ones(3, dtype=torch.bool), layer)
    assert np.allclose(got.detach().numpy(), attention_oracle(x.numpy(), layer), atol=1e-12)
    layer2 = MultiHeadSelfAttention(5, 3, 2)
    x2 = torch.randn(4, 5)
    got2 = multi_head_self_attention(x2, torch.ones(4, dtype=torch.bool), layer2)
    assert np.allclose(got2.detach().numpy(), attention_oracle(x2.numpy(), layer2), atol=1e-12)


def test_attention_single_token_and_identical_tokens():
    torch.manual_seed(0)
    layer = MultiHeadSelfAttention(4, 2, 3)
    x = torch.randn(1, 4)
    out = multi_head_self_attention(x, [True], layer)
    assert torch.allclose(out, layer.value(x))
    twin = torch.cat([x, x])
    out2 = multi_head_self_attention(twin, [True, True], layer)
    assert torch.equal(out2[0], out2[1])
    with pytest.raises(ValueError):
        multi_head_self_attention(x, [False], layer)


def test_masked_positions_do_not_matter():
    torch.manual_seed(1)
    layer = MultiHeadSelfAttention(4, 2, 3)
    x = torch.randn(1, 5, 4)
    mask = torch.tensor([[True, True, True, False, False]])
    y = x.clone()
    y[0, 3:] = torch.randn(2, 4) * 100
    a, b = layer(x, mask), layer(y, mask)
    assert torch.allclose(a[0, :3], b[0, :3]) and not b[0, 3:].any()


def test_masked_softmax_all_masked_is_zero():
    w = masked_softmax(torch.randn(2, 3), torch.zeros(2, 3, dtype=torch.bool))
    assert not w.any()


def test_pool_examples():
    torch.manual_seed(0)
    pool = AttentivePool(3, 2)
    x = torch.randn(1, 3)
    assert torch.allclose(attentive_pool(x, [True], pool), x[0])
    with torch.no_grad():
        pool.query.zero_()  # equal logits
    x3 = torch.randn(3, 3)
    assert torch.allclose(attentive_pool(x3, [True, True, False], pool), x3[:2].mean(0))
    with pytest.raises(ValueError):
        attentive_pool(x3, [False, False, False], pool)


def test_pool_logits_ln2_give_two_thirds():
    pool = AttentivePool(1, 1)
    with torch.no_grad():
        pool.proj.weight.fill_(1.0)
        pool.proj.bias.zero_()
        pool.query.fill_(1.0)
    # tanh(x) = ln 2 and 0 for the two rows
    x = torch.tensor([[[math.atanh(math.log(2))], [0.0]]])
    w = pool.weights(x, torch.ones(1, 2, dtype=torch.bool))[0]
    assert torch.allclose(w, torch.tensor([2 / 3, 1 / 3]), atol=1e-12)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.just(3)),
                  elements=st.floats(-5, 5, allow_subnormal=False)),
       st.integers(0, 2**16))
def test_pool_convex_hull_and_weights(x, seed):
    torch.manual_seed(seed)
    pool = AttentivePool(3, 2)
    xt = torch.as_tensor(x)[None]
    mask = torch.ones(1, len(x), dtype=torch.bool)
    w = pool.weights(xt, mask)
    assert (w >= 0).all() and abs(w.sum().item() - 1) < 1e-6
    out = pool(xt, mask)[0].detach().numpy()
    assert np.all(out >= x.min(0) - 1e-9) and np.all(out <= x.max(0) + 1e-9)


def test_encode_text_identical_tokens():
    enc = encoder(dropout=0.0)
    one = enc.text_attention(enc.word_embedding(torch.tensor([[3]])), torch.ones(1, 1, dtype=torch.bool))[0, 0]
    n_t, empty = encode_text(article([3, 3, 3]), enc)
    assert torch.allclose(n_t, one) and not empty


def test_encode_deterministic_without_dropout_and_random_with():
    enc = encoder().eval()
    art = article([1, 2, 3, 4], [1, 2])
    assert torch.equal(encode_news(art, enc), encode_news(art, enc))
    torch.manual_seed(5)
    a = encode_news(art, enc, dropout_active=True)
    b = encode_news(art, enc, dropout_active=True)
    assert not torch.equal(a, b)
    assert not enc.training  # restored


def test_padding_tail_and_empty_inputs():
    enc = encoder()
    n1, _ = encode_text(article([4, 5]), enc)
    with torch.no_grad():
        enc.word_embedding.weight[0].fill_(7.0)  # padding rows are masked anyway
    n2, _ = encode_text(article([4, 5]), enc)
    assert torch.allclose(n1, n2)
    n_t, empty = encode_text(article([]), enc)
    assert empty and not n_t.any()
    assert not encode_entities(article([1]), enc).any()


def test_single_entity_and_swap_symmetry():
    enc = encoder(dropout=0.0)
    single = encode_entities(article([1], [2]), enc)
    x = enc.entity_embedding(torch.tensor([[2]]))
    ref = enc.entity_pool(enc.entity_attention(x, torch.ones(1, 1, dtype=torch.bool)),
                          torch.ones(1, 1, dtype=torch.bool))[0]
    assert torch.allclose(single, ref)
    assert torch.allclose(encode_entities(article([1], [2, 3]), enc), encode_entities(article([1], [3, 2]), enc))


def test_fusion_is_linear():
    enc = encoder(dropout=0.0)
    art = article([1, 2, 3], [1, 4])
    n_t, _ = encode_text(art, enc)
    n_e = encode_entities(art, enc)
    direct = enc.W_t.weight @ n_t + enc.W_e.weight @ n_e
    assert torch.allclose(encode_news(art, enc), direct, atol=1e-12)
    no_ent = article([1, 2, 3])
    assert torch.allclose(encode_news(no_ent, enc), enc.W_t.weight @ encode_text(no_ent, enc)[0])


def test_identity_fusion():
    cfg = ModelConfig(**{**TINY_MODEL, "news_dim": 8}, max_title_len=6, max_entities=3)
    torch.manual_seed(0)
    enc = NewsEncoder(12, 6, cfg, dropout=0.0)
    with torch.no_grad():
        enc.W_t.weight.copy_(torch.eye(8))
        enc.W_e.weight.zero_()
    art = article([1, 2], [3])
    assert torch.allclose(encode_news(art, enc), encode_text(art, enc)[0])


def test_pretrained_tables_are_used():
    table = np.arange(12 * CFG.word_dim, dtype=np.float64).reshape(12, CFG.word_dim)
    enc = NewsEncoder(12, 6, CFG, word_table=table)
    assert np.array_equal(enc.word_embedding.weight[1:].detach().numpy(), table[1:])
    assert not enc.word_embedding.weight[0].any()

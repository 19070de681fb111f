from __future__ import annotations

import torch
from torch import nn

from .. import diffcore as dc
from .layers import LayerNorm, Linear, Stage


class MultiHeadAttention(nn.Module):
    # The key projection carries no bias: a key bias shifts every score of a
    # query by the same amount and cancels in the softmax.
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q_proj = Linear(d_model, d_model)
        self.k_proj = Linear(d_model, d_model, bias=False)
        self.v_proj = Linear(d_model, d_model)
        self.out_proj = Linear(d_model, d_model)

    def forward(self, query, context):
        att = dc.scaled_dot_product_attention(
            self.q_proj(query), self.k_proj(context), self.v_proj(context), self.heads)
        return self.out_proj(att)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, width: int, dropout: float):
        super().__init__()
        self.fc1 = Linear(d_model, width, relu=True)
        self.fc2 = Linear(width, d_model)
        self.dropout = dropout

    def forward(self, x):
        h = dc.dropout(dc.relu(self.fc1(x)), self.dropout, self.training)
        return self.fc2(h)


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, ffn: int, dropout: float):
        super().__init__()
        self.norm1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads)
        self.norm2 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn, dropout)
        self.dropout = dropout

    def forward(self, x):
        h = self.norm1(x)
        x = dc.add(x, dc.dropout(self.attn(h, h), self.dropout, self.training))
        return dc.add(x, dc.dropout(self.ffn(self.norm2(x)), self.dropout, self.training))


class DecoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, ffn: int, dropout: float):
        super().__init__()
        self.norm1 = LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, heads)
        self.norm2 = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, heads)
        self.norm3 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn, dropout)
        self.dropout = dropout

    def forward(self, t, memory):
        h = self.norm1(t)
        t = dc.add(t, dc.dropout(self.self_attn(h, h), self.dropout, self.training))
        t = dc.add(t, dc.dropout(self.cross_attn(self.norm2(t), memory), self.dropout, self.training))
        return dc.add(t, dc.dropout(self.ffn(self.norm3(t)), self.dropout, self.training))


class QueryToken(nn.Module):
    def __init__(self, d_model: int):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(1, 1, d_model) * 0.02)

    def forward(self, batch: int):
        return self.weight.expand(batch, 1, -1)


class TransformerBranch(nn.Module):
    """Pre-LN encoder over the tokens, then a decoder driven by one learned query.

    Returns the query's final latent [B, d_model].
    """

    def __init__(self, d_model: int, heads: int, layers: int, ffn: int, dropout: float):
        super().__init__()
        self.encoder = nn.ModuleList(EncoderLayer(d_model, heads, ffn, dropout) for _ in range(layers))
        self.encoder_norm = LayerNorm(d_model)
        self.query = QueryToken(d_model)
        self.decoder = nn.ModuleList(DecoderLayer(d_model, heads, ffn, dropout) for _ in range(layers))
        self.decoder_norm = LayerNorm(d_model)

    def forward(self, tokens):
        x = tokens
        for layer in self.encoder:
            x = layer(x)
        memory = self.encoder_norm(x)
        t = self.query(tokens.shape[0])
        for layer in self.decoder:
            t = layer(t, memory)
        return self.decoder_norm(t)[:, 0]

    def stages(self, prefix: str, tokens_key: str, latent_key: str) -> list[Stage]:
        out = []
        key = tokens_key
        for i, layer in enumerate(self.encoder):
            nxt = f"{prefix}.enc{i}"
            out.append(Stage(nxt, layer, (key,), (nxt,), lambda x, layer=layer: (layer(x),)))
            key = nxt
        mem = f"{prefix}.memory"
        out.append(Stage(mem, self.encoder_norm, (key,), (mem,), lambda x: (self.encoder_norm(x),)))
        key = f"{prefix}.query"
        out.append(Stage(key, self.query, (mem,), (key,), lambda m: (self.query(m.shape[0]),)))
        for i, layer in enumerate(self.decoder):
            nxt = f"{prefix}.dec{i}"
            out.append(Stage(nxt, layer, (key, mem), (nxt,), lambda t, m, layer=layer: (layer(t, m),)))
            key = nxt
        out.append(Stage(f"{prefix}.latent", self.decoder_norm, (key,), (latent_key,),
                         lambda t: (self.decoder_norm(t)[:, 0],)))
        return out


class MlpHead(nn.Module):
    def __init__(self, d_model: int, out_dim: int):
        super().__init__()
        self.hidden = Linear(d_model, d_model, relu=True)
        self.out = Linear(d_model, out_dim)

    def forward(self, latent):
        return self.out(dc.relu(self.hidden(latent)))

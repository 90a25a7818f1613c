"""Minimal ViT-S/8 with access to the last attention layer's key map.

Parameter names follow the reference self-supervised checkpoint layout
(patch_embed.proj, cls_token, pos_embed, blocks.N.{norm1,attn.qkv,
attn.proj,norm2,mlp.fc1,mlp.fc2}, norm) so pretrained weights load
directly via ``load_state_dict``.
"""

from __future__ import annotations

import math

import torch
from torch import nn

EMBED_DIM = 384
PATCH_SIZE = 8
NUM_HEADS = 6
DEPTH = 12
MLP_RATIO = 4


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) \
            -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (attended tokens, key map in embedding order)."""
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads,
                                  c // self.num_heads)
        qkv = qkv.permute(2, 0, 3, 1, 4)  # (3, B, heads, N, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        # concatenate heads back to the projection's embedding order
        key = k.transpose(1, 2).reshape(b, n, c)
        return self.proj(out), key


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * mlp_ratio)

    def forward(self, x):
        attended, key = self.attn(self.norm1(x))
        x = x + attended
        x = x + self.mlp(self.norm2(x))
        return x, key


class VisionTransformer(nn.Module):
    def __init__(self, img_size: int = 224):
        super().__init__()
        self.patch_embed = nn.Module()
        self.patch_embed.proj = nn.Conv2d(3, EMBED_DIM, kernel_size=PATCH_SIZE,
                                          stride=PATCH_SIZE)
        n_patches = (img_size // PATCH_SIZE) ** 2
        self.cls_token = nn.Parameter(torch.zeros(1, 1, EMBED_DIM))
        self.pos_embed = nn.Parameter(torch.zeros(1, n_patches + 1,
                                                  EMBED_DIM))
        self.blocks = nn.ModuleList(
            Block(EMBED_DIM, NUM_HEADS, MLP_RATIO) for _ in range(DEPTH)
        )
        self.norm = nn.LayerNorm(EMBED_DIM)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)

    def _interpolate_pos_embed(self, h: int, w: int) -> torch.Tensor:
        """Resample the (square) patch position grid to h x w tokens."""
        n = self.pos_embed.shape[1] - 1
        side = int(math.sqrt(n))
        if side * side != n:
            raise ValueError(f"non-square position grid ({n} tokens)")
        if (h, w) == (side, side):
            return self.pos_embed
        cls_pos = self.pos_embed[:, :1]
        grid = self.pos_embed[:, 1:].reshape(1, side, side, EMBED_DIM)
        grid = grid.permute(0, 3, 1, 2)
        grid = nn.functional.interpolate(
            grid, size=(h, w), mode="bicubic", align_corners=False
        )
        grid = grid.permute(0, 2, 3, 1).reshape(1, h * w, EMBED_DIM)
        return torch.cat([cls_pos, grid], dim=1)

    def last_layer_keys(self, images: torch.Tensor) -> torch.Tensor:
        """Keys of the final attention layer for each patch token.

        ``images`` is (B, 3, H, W) with H, W multiples of the patch size;
        returns (B, H/p, W/p, 384).
        """
        b, _, h_px, w_px = images.shape
        h, w = h_px // PATCH_SIZE, w_px // PATCH_SIZE
        x = self.patch_embed.proj(images)  # (B, C, h, w)
        x = x.flatten(2).transpose(1, 2)  # (B, h*w, C)
        cls = self.cls_token.expand(b, -1, -1)
        x = torch.cat([cls, x], dim=1)
        x = x + self._interpolate_pos_embed(h, w)
        key = None
        for block in self.blocks:
            x, key = block(x)
        return key[:, 1:].reshape(b, h, w, EMBED_DIM)

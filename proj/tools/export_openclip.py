#!/usr/bin/env python3
"""Export an OpenCLIP ViT checkpoint to the glocal backbone archive.

Usage:
    python tools/export_openclip.py --out vitl14_336.npz \
        [--model ViT-L-14-336] [--pretrained openai]

The result loads with `--backbone archive:vitl14_336.npz`. Needs torch and
open_clip_torch; neither is required to build or test the C++ code.
"""

import argparse

import numpy as np


def text_bytes(s):
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8)


def single_token(tokenizer, word):
    ids = tokenizer.encode(word)
    if len(ids) != 1:
        raise SystemExit(f"'{word}' is not a single BPE token: {ids}")
    return ids[0]


def export(model_name, pretrained, out, dtype):
    import open_clip
    import torch
    from open_clip.tokenizer import SimpleTokenizer

    model, _, preprocess = open_clip.create_model_and_transforms(
        model_name, pretrained=pretrained or None)
    model.eval()
    sd = {k: v.detach().to(torch.float64).cpu().numpy()
          for k, v in model.state_dict().items()}
    arrays = {}

    def put(key, value):
        arrays[key] = np.ascontiguousarray(value, dtype=dtype)

    def put_blocks(src_prefix, dst_prefix, count):
        for i in range(count):
            s = f"{src_prefix}{i}."
            d = f"{dst_prefix}{i}."
            for name in ("ln_1.weight", "ln_1.bias", "attn.in_proj_weight",
                         "attn.in_proj_bias", "attn.out_proj.weight",
                         "attn.out_proj.bias", "ln_2.weight", "ln_2.bias",
                         "mlp.c_fc.weight", "mlp.c_fc.bias",
                         "mlp.c_proj.weight", "mlp.c_proj.bias"):
                put(d + name, sd[s + name])

    gelu = model.transformer.resblocks[0].mlp.gelu
    activation = "quick_gelu" if type(gelu).__name__ == "QuickGELU" else "gelu"

    text_layers = len(model.transformer.resblocks)
    arrays["text.heads"] = np.array(model.transformer.resblocks[0].attn.num_heads,
                                    dtype=np.int64)
    arrays["text.activation"] = text_bytes(activation)
    put("text.token_embedding", sd["token_embedding.weight"])
    put("text.positional_embedding", sd["positional_embedding"])
    put_blocks("transformer.resblocks.", "text.layers.", text_layers)
    put("text.ln_final.weight", sd["ln_final.weight"])
    put("text.ln_final.bias", sd["ln_final.bias"])
    put("text.text_projection", sd["text_projection"])

    tok = SimpleTokenizer()
    arrays["text.vocab.sot"] = np.array(tok.encoder["<start_of_text>"], dtype=np.int64)
    arrays["text.vocab.eot"] = np.array(tok.encoder["<end_of_text>"], dtype=np.int64)
    arrays["text.vocab.object"] = np.array(single_token(tok, "object"), dtype=np.int64)
    arrays["text.vocab.damaged"] = np.array(single_token(tok, "damaged"), dtype=np.int64)
    arrays["text.vocab.carrier"] = np.array(tok.encode("a photo of a"), dtype=np.int64)

    visual = model.visual
    vision_layers = len(visual.transformer.resblocks)
    arrays["vision.heads"] = np.array(visual.transformer.resblocks[0].attn.num_heads,
                                      dtype=np.int64)
    arrays["vision.activation"] = text_bytes(activation)
    put("vision.conv1.weight", sd["visual.conv1.weight"])
    put("vision.class_embedding", sd["visual.class_embedding"])
    put("vision.positional_embedding", sd["visual.positional_embedding"])
    put("vision.ln_pre.weight", sd["visual.ln_pre.weight"])
    put("vision.ln_pre.bias", sd["visual.ln_pre.bias"])
    put_blocks("visual.transformer.resblocks.", "vision.layers.", vision_layers)
    put("vision.ln_post.weight", sd["visual.ln_post.weight"])
    put("vision.ln_post.bias", sd["visual.ln_post.bias"])
    put("vision.proj", sd["visual.proj"])

    norm = next(t for t in preprocess.transforms if type(t).__name__ == "Normalize")
    put("vision.image_mean", np.asarray(norm.mean))
    put("vision.image_std", np.asarray(norm.std))

    put("logit_scale", sd["logit_scale"].reshape(()))
    np.savez(out, **arrays)
    print(f"wrote {out}: text {text_layers} layers, vision {vision_layers} layers, "
          f"image size {visual.image_size}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", default="ViT-L-14-336")
    p.add_argument("--pretrained", default="openai",
                   help="pretrained tag; empty for random weights")
    p.add_argument("--out", required=True)
    p.add_argument("--float32", action="store_true",
                   help="store weights as float32 to halve the file size")
    args = p.parse_args()
    export(args.model, args.pretrained, args.out,
           np.float32 if args.float32 else np.float64)


if __name__ == "__main__":
    main()

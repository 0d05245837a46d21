"""
Application constants and the default run configuration.
"""

# General
app_name = "latent-condense"
version = "0.1.0"

# Files and environment
config_file_name = ".latent-condense.toml"
output_dir_env = "LATENTCONDENSE_OUTPUT_DIR"
default_output_dir = "reports"

# Desk-scale defaults; long-context runs (g=16, w=1024) override them per run.
defaults = {
    "seed": 0,
    "length": 256,
    "precision": "f64",
    "mode": "prefill",
    "trials": 200,
    "decode_tokens": 64,
    "model": {
        "d": 64,
        "d_c": 16,
        "d_r": 8,
        "d_k_prime": 16,
        "d_v": 16,
        "n_heads": 4,
        "rope_base": 10000.0,
    },
    "lca": {
        "g": 16,
        "w": 64,
        "n_summary_queries": 16,
        "mask_policy": "rep_causal",
        "semantic_pool": "weighted",
        "positional_pool": "max_select",
    },
    "gqa": {
        "d": 64,
        "n_q_heads": 8,
        "n_kv_heads": 2,
        "d_head": 16,
    },
    "sweep": {
        "g": [4, 8, 16, 32],
        "w": [16, 32, 64],
        "n_summary_queries": [8, 16, 32],
        "pooling": "all",
    },
}

# Binary formats
weights_magic = b"MLAW"
gqa_weights_magic = b"GQAW"
cache_magic = b"LCAC"
format_version = 1

# Styling
style = "clean"
style_map = {
    "default": {
        "title": "bold red",
        "header": "bold magenta",
        "ok": "bright_green",
        "fail": "bold red",
        "number": "cyan",
    },
    "clean": {
        "title": "bold",
        "header": "gray",
        "ok": "green",
        "fail": "red",
        "number": "white",
    },
}

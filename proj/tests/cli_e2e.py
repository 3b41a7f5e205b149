"""End-to-end run of the linpatch CLI on a tiny model."""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

CLI = sys.argv[1]
CORPUS = sys.argv[2]
failures = []


def run(*args, expect=0):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if proc.returncode != expect:
        failures.append(f"{' '.join(map(str, args))}: exit {proc.returncode}, wanted {expect}\n{proc.stderr}")
    return proc


def run_json(*args):
    proc = run("--json", *args)
    try:
        return json.loads(proc.stdout)
    except json.JSONDecodeError:
        failures.append(f"{' '.join(map(str, args))}: not JSON: {proc.stdout[:200]}")
        return {}


def check(cond, what):
    if not cond:
        failures.append(what)


with tempfile.TemporaryDirectory() as tmp:
    d = Path(tmp)
    tiny = ["--layers", 6, "--dim", 16, "--heads", 2, "--seq-len", 16, "--batch", 4, "--steps", 30]

    run("train-toy", "--out", d / "x.ckpt", expect=2)
    run("frobnicate", expect=2)
    run("train-toy", "--corpus", d / "missing.txt", "--out", d / "x.ckpt", expect=3)

    a = run_json("train-toy", "--corpus", CORPUS, *tiny, "--out", d / "dense.ckpt")
    b = run_json("train-toy", "--corpus", CORPUS, *tiny, "--out", d / "dense2.ckpt")
    check(a.get("backbone_digest") == b.get("backbone_digest"), "train-toy is not deterministic")
    check(a.get("final_ppl", 1e9) < a.get("initial_ppl", 0), "train-toy did not reduce perplexity")
    z = run_json("train-toy", "--corpus", CORPUS, *tiny[:-2], "--steps", 0, "--out", d / "zero.ckpt")
    z2 = run_json("train-toy", "--corpus", CORPUS, *tiny[:-2], "--steps", 0, "--seed", 2, "--out", d / "zero2.ckpt")
    check(z.get("backbone_digest") != z2.get("backbone_digest"), "seed does not change the initialization")

    t = run_json("trace", "--model", d / "dense.ckpt", "--calib", CORPUS, "--samples", 8, "--out", d / "trace.bin")
    check(t.get("samples") == 8 and t.get("seq_len") == 16 and t.get("states") == 7, f"trace shape {t}")
    run_json("trace", "--model", d / "dense.ckpt", "--calib", CORPUS, "--samples", 1, "--out", d / "one.bin")

    spec = run_json("select", "--trace", d / "trace.bin", "--n", 2, "--out", d / "spec.json")
    check(len(spec.get("selected", [])) == 2, f"select returned {spec}")
    nc = run_json("select", "--trace", d / "trace.bin", "--n", 2, "--mode", "noncontiguous-cosine",
                  "--out", d / "spec_nc.json")
    check(len(nc.get("selected", [])) == 2, f"noncontiguous select returned {nc}")
    run("select", "--trace", d / "trace.bin", "--n", 9, expect=3)
    run("select", "--trace", d / "trace.bin", "--n", 1, "--mode", "bogus", expect=2)

    run_json("prune", "--model", d / "dense.ckpt", "--spec", d / "spec.json", "--out", d / "pruned.ckpt")
    for variant in ("none", "scale-raw", "linearpatch"):
        p = run_json("patch", "--model", d / "dense.ckpt", "--trace", d / "trace.bin", "--spec", d / "spec.json",
                     "--variant", variant, "--out", d / f"{variant}.ckpt")
        check(len(p.get("slots", [])) == (0 if variant == "none" else 1), f"{variant} slots {p}")
    p = run_json("patch", "--model", d / "dense.ckpt", "--trace", d / "trace.bin", "--spec", d / "spec_nc.json",
                 "--out", d / "nc.ckpt")
    check(len(p.get("slots", [])) == 2, f"noncontiguous slots {p}")

    c = run_json("cache-logits", "--teacher", d / "dense.ckpt", "--corpus", CORPUS, "--samples", 40,
                 "--out", d / "cache.bin")
    check(c.get("k") == 100, f"cache K {c}")
    check((d / "cache.bin").stat().st_size == c.get("bytes"), "cache file size differs from the report")

    ft = run_json("distill", "--model", d / "linearpatch.ckpt", "--cache", d / "cache.bin", "--corpus", CORPUS,
                  "--lr", 1e-3, "--out", d / "ft.ckpt")
    check(ft.get("samples") == 40 and ft.get("steps") == 5, f"distill ran {ft}")
    base = run_json("distill", "--model", d / "linearpatch.ckpt", "--cache", d / "cache.bin", "--corpus", CORPUS,
                    "--lr", 0, "--out", d / "ft0.ckpt")
    check(ft.get("backbone_digest") == base.get("backbone_digest"), "distill changed the backbone")
    check(ft.get("patch_digest") != base.get("patch_digest"), "distill did not move the patch")
    base2 = run_json("distill", "--model", d / "linearpatch.ckpt", "--cache", d / "cache.bin", "--corpus", CORPUS,
                     "--lr", 0, "--epochs", 2, "--out", d / "ft00.ckpt")
    check(base.get("patch_digest") == base2.get("patch_digest"), "lr 0 changed the patch")
    mse = run_json("distill", "--model", d / "linearpatch.ckpt", "--cache", d / "cache.bin", "--corpus", CORPUS,
                   "--loss", "mse", "--teacher", d / "dense.ckpt", "--spec", d / "spec.json", "--out", d / "mse.ckpt")
    check(mse.get("steps") == 5, f"mse distill ran {mse}")
    run("distill", "--model", d / "linearpatch.ckpt", "--cache", d / "cache.bin", "--corpus", CORPUS,
        "--loss", "mse", "--out", d / "bad.ckpt", expect=2)
    run("distill", "--model", d / "pruned.ckpt", "--cache", d / "cache.bin", "--corpus", CORPUS,
        "--out", d / "bad.ckpt", expect=3)

    rows = run_json("eval", "--models", f"dense={d / 'dense.ckpt'}", f"vanilla={d / 'none.ckpt'}",
                    f"+d={d / 'scale-raw.ckpt'}", f"+P={d / 'linearpatch.ckpt'}", f"+FT={d / 'ft.ckpt'}",
                    f"pruned={d / 'pruned.ckpt'}", "--corpus", CORPUS, "--max-windows", 50)
    check(len(rows) == 6, f"eval rows {rows}")
    if len(rows) == 6:
        check([r["variant"] for r in rows[:5]] == ["dense", "vanilla", "+d", "+P", "+FT"], f"labels {rows}")
        check(rows[1]["perplexity"] == rows[5]["perplexity"], "patch --variant none differs from prune")
        check(rows[0]["retained"] == 1.0, "dense RP is not 1")
    table = run("eval", "--models", d / "dense.ckpt", d / "ft.ckpt", "--corpus", CORPUS, "--max-windows", 5).stdout
    check("ft" in table, f"eval table lacks labels:\n{table}")

    small = ["train-toy", "--corpus", CORPUS, "--layers", 2, "--dim", 16, "--heads", 2, "--seq-len", 16,
             "--steps", 0, "--out", d / "small.ckpt"]
    run(*small)
    run("patch", "--model", d / "small.ckpt", "--trace", d / "trace.bin", "--spec", d / "spec.json",
        "--out", d / "bad.ckpt", expect=3)
    err = run("eval", "--models", d / "dense.ckpt", d / "small.ckpt", "--corpus", CORPUS, "--max-windows", 2).stderr
    check(err == "", f"eval across depths should work: {err}")

    mags = run("analyze", "magnitudes", "--trace", d / "trace.bin").stdout.splitlines()
    check(mags[0] == "layer_index,channel_index,mean_abs_activation" and len(mags) == 1 + 7 * 16, "magnitudes CSV")
    sig = run("analyze", "sigma", "--trace", d / "trace.bin", "--spec", d / "spec.json").stdout.splitlines()
    check(sig[0] == "l_star,n,sigma_raw,sigma_rotated" and len(sig) == 2, f"sigma CSV {sig}")
    run("analyze", "sigma", "--trace", d / "trace.bin", expect=2)
    run("select", "--n", 2, expect=2)
    al = run_json("analyze", "alpha", "--model", d / "dense.ckpt", "--trace", d / "trace.bin", "--spec",
                  d / "spec.json", "--corpus", CORPUS, "--alphas", 0.5, 1.0, "--max-windows", 10)
    check(len(al) == 2 and al[1]["alpha"] == 1.0, f"alpha rows {al}")

for f in failures:
    print("FAIL:", f)
print("cli e2e:", "ok" if not failures else f"{len(failures)} failure(s)")
sys.exit(1 if failures else 0)

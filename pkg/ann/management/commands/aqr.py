"""
The ``aqr`` command: dataset generation, ground truth, index build, queries
and benchmarks.

    python manage.py aqr gen   --n 100000 --d 128 --clusters 10 --spread 20 --seed 1 --out data.fvecs
    python manage.py aqr gt    --base data.fvecs --queries q.fvecs --k 100 --out gt.ivecs
    python manage.py aqr build --input data.fvecs --out index.aqr --mode aqr
    python manage.py aqr query --index index.aqr --queries q.fvecs --k 10 --preset 0.95-0.97
    python manage.py aqr bench --index index.aqr --queries q.fvecs --truth gt.ivecs --csv out.csv
    python manage.py aqr sweep --index index.aqr --queries q.fvecs --truth gt.ivecs --axis n_coarse --values 35,45,55,70
"""

import json
from pathlib import Path
from typing import List

import numpy as np
from django.core.management.base import BaseCommand, CommandError

from ann.services import defaults
from ann.services.bench_harness import (
    PRESETS,
    SWEEP_AXES,
    compare_builds,
    ground_truth,
    kernel_benchmark,
    measure,
    preset,
    sweep,
    write_csv,
    write_latency_csv,
)
from ann.services.exceptions import AQRError
from ann.services.hnsw_graph import BuildConfig, GraphIndex, build
from ann.services.search_pipeline import SearchConfig, search
from ann.services.vector_store import (
    DEFAULT_INTRINSIC_DIM,
    Dataset,
    gen_clustered,
    gen_queries,
    load_bvecs,
    load_fvecs,
    load_ivecs,
    repeat_queries,
    split_holdout,
    write_fvecs,
    write_ivecs,
)

MODE_CHOICES = ["baseline", "sq", "aqr"]


def _load_vectors(path: str) -> Dataset:
    return load_bvecs(path) if Path(path).suffix == ".bvecs" else load_fvecs(path)


def _add_search_options(parser) -> None:
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--preset", choices=list(PRESETS), default=None)
    parser.add_argument("--no-early-termination", action="store_true")
    parser.add_argument("--mode", choices=MODE_CHOICES, default=None,
                        help="Search mode; defaults to the index's own mode")
    parser.add_argument("--nc", type=int, dest="n_coarse")
    parser.add_argument("--nrerank", type=int, dest="n_rerank")
    parser.add_argument("--tau-gap", type=float)
    parser.add_argument("--tau-ratio", type=float)
    parser.add_argument("--mef", type=int, dest="m_ef")
    parser.add_argument("--ef-search", type=int)


def _search_config(options) -> SearchConfig:
    chosen = preset(options["preset"] or defaults()["DEFAULT_PRESET"])
    return chosen.to_config(
        k=options["k"],
        early_termination=not options["no_early_termination"],
        n_coarse=options["n_coarse"],
        n_rerank=options["n_rerank"],
        tau_gap=options["tau_gap"],
        tau_ratio=options["tau_ratio"],
        m_ef=options["m_ef"],
        ef_search=options["ef_search"],
        mode=options["mode"],
    ).validate()


def _parse_values(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise CommandError(f"--values must be a comma-separated list of numbers, got {text!r}")


class Command(BaseCommand):
    help = "AQR-HNSW dataset, index and benchmark tools"

    def add_arguments(self, parser):
        sub = parser.add_subparsers(dest="subcommand", required=True)

        gen = sub.add_parser("gen", help="Generate a clustered synthetic dataset")
        gen.add_argument("--n", type=int, required=True)
        gen.add_argument("--d", type=int, required=True)
        gen.add_argument("--clusters", type=int, default=10)
        gen.add_argument("--spread", type=float, default=20.0)
        gen.add_argument("--seed", type=int, default=0)
        gen.add_argument("--out", required=True)
        gen.add_argument("--intrinsic-dim", type=int, default=DEFAULT_INTRINSIC_DIM,
                         help="Per-cluster subspace dimension (0 = full d)")
        gen.add_argument("--center-box", type=float, default=5.0)
        gen.add_argument("--queries-out", help="Also write queries from the same distribution")
        gen.add_argument("--n-queries", type=int, default=1000)
        gen.add_argument("--query-source", choices=("holdout", "perturbed"), default="holdout",
                         help="Held-out generated rows, or dataset rows plus noise")
        gen.add_argument("--noise", type=float, default=0.05, help="Perturbation for --query-source perturbed")

        gt = sub.add_parser("gt", help="Brute-force exact ground truth")
        gt.add_argument("--base", required=True)
        gt.add_argument("--queries", required=True)
        gt.add_argument("--k", type=int, default=100)
        gt.add_argument("--out", required=True)
        gt.add_argument("--workers", type=int, default=None)

        bld = sub.add_parser("build", help="Build and save an index")
        bld.add_argument("--input", required=True)
        bld.add_argument("--out", required=True)
        bld.add_argument("--mode", choices=MODE_CHOICES, default="aqr")
        bld.add_argument("--m", type=int, default=16)
        bld.add_argument("--ef-construction", type=int, default=200)
        bld.add_argument("--k-density", type=int, default=None)
        bld.add_argument("--p-max", type=float, default=None)
        bld.add_argument("--seed", type=int, default=42)
        bld.add_argument("--literal-weights", action="store_true")

        query = sub.add_parser("query", help="Run queries and print or save result ids")
        query.add_argument("--index", required=True)
        query.add_argument("--queries", required=True)
        query.add_argument("--out", help="Write result ids as ivecs")
        _add_search_options(query)

        bench = sub.add_parser("bench", help="Measure QPS, recall and latency")
        bench.add_argument("--index", required=True)
        bench.add_argument("--queries", required=True)
        bench.add_argument("--truth")
        bench.add_argument("--warmup", type=int, default=100)
        bench.add_argument("--repeats", type=int, default=3)
        bench.add_argument("--repeat-to", type=int, help="Tile the query set up to this many queries")
        bench.add_argument("--csv")
        bench.add_argument("--latency-csv")
        bench.add_argument("--bins", type=int, default=50)
        _add_search_options(bench)

        swp = sub.add_parser("sweep", help="Vary one search parameter")
        swp.add_argument("--index", required=True)
        swp.add_argument("--queries", required=True)
        swp.add_argument("--truth")
        swp.add_argument("--axis", choices=SWEEP_AXES, required=True)
        swp.add_argument("--values", required=True)
        swp.add_argument("--warmup", type=int, default=0)
        swp.add_argument("--repeats", type=int, default=1)
        swp.add_argument("--csv")
        _add_search_options(swp)

        cmp_build = sub.add_parser("compare-build", help="Build time per mode at identical M_0/ef_0")
        cmp_build.add_argument("--input", required=True)
        cmp_build.add_argument("--modes", default="baseline,sq,aqr")
        cmp_build.add_argument("--m", type=int, default=16)
        cmp_build.add_argument("--ef-construction", type=int, default=200)
        cmp_build.add_argument("--seed", type=int, default=42)
        cmp_build.add_argument("--csv")

        kbench = sub.add_parser("kernel-bench", help="Time every kernel tier on this host")
        kbench.add_argument("--d", type=int, default=128)
        kbench.add_argument("--pairs", type=int, default=10000)
        kbench.add_argument("--seed", type=int, default=0)
        kbench.add_argument("--csv")

        info = sub.add_parser("info", help="Describe an index file")
        info.add_argument("--index", required=True)

    def handle(self, *args, **options):
        handler = getattr(self, f"_handle_{options['subcommand'].replace('-', '_')}")
        try:
            handler(options)
        except AQRError as e:
            raise CommandError(f"{type(e).__name__}: {e.message}")
        except OSError as e:
            raise CommandError(f"{e.filename or ''}: {e.strerror}")

    # ------------------------------------------------------------------
    # Subcommands
    # ------------------------------------------------------------------

    def _handle_gen(self, options):
        holdout = options["queries_out"] and options["query_source"] == "holdout"
        n = options["n"] + (options["n_queries"] if holdout else 0)
        dataset = gen_clustered(n, options["d"], options["clusters"], options["spread"], options["seed"],
                                center_box=options["center_box"], intrinsic_dim=options["intrinsic_dim"] or None)
        queries = None
        if holdout:
            dataset, queries = split_holdout(dataset, options["n_queries"])
        elif options["queries_out"]:
            queries = gen_queries(dataset, options["n_queries"], options["noise"], options["seed"] + 1)
        write_fvecs(options["out"], dataset)
        self.stdout.write(f"wrote {dataset.n} x {dataset.d} vectors to {options['out']}")
        if queries is not None:
            write_fvecs(options["queries_out"], queries)
            self.stdout.write(f"wrote {queries.n} queries to {options['queries_out']}")

    def _handle_gt(self, options):
        base = _load_vectors(options["base"])
        queries = _load_vectors(options["queries"])
        truth = ground_truth(base, queries, options["k"], workers=options["workers"])
        write_ivecs(options["out"], truth)
        self.stdout.write(f"wrote top-{options['k']} ids for {truth.shape[0]} queries to {options['out']}")

    def _handle_build(self, options):
        dataset = _load_vectors(options["input"])
        config = BuildConfig.from_settings(
            m0=options["m"],
            ef0=options["ef_construction"],
            k_density=options["k_density"],
            p_max=options["p_max"],
            seed=options["seed"],
            mode=options["mode"],
            literal_weights=options["literal_weights"],
        )
        index = build(dataset, config)
        index.save(options["out"])
        gp = index.graph_params
        self.stdout.write(
            f"built {index.mode.value} index: n={index.n} d={index.d} M={gp.m} "
            f"ef_construction={gp.ef_construction} in {index.build_seconds:.2f}s -> {options['out']}"
        )

    def _handle_query(self, options):
        index = GraphIndex.load(options["index"])
        queries = _load_vectors(options["queries"])
        config = _search_config(options)
        results = [search(index, q, config) for q in queries.data]
        if options["out"]:
            ids = np.full((len(results), config.k), -1, dtype=np.int32)
            for row, result in enumerate(results):
                ids[row, : len(result.ids)] = result.ids
            write_ivecs(options["out"], ids)
            self.stdout.write(f"wrote results for {len(results)} queries to {options['out']}")
        else:
            for row, result in enumerate(results):
                self.stdout.write(f"{row}: {' '.join(str(i) for i in result.ids)}")

    def _handle_bench(self, options):
        index = GraphIndex.load(options["index"])
        queries = _load_vectors(options["queries"])
        truth = load_ivecs(options["truth"]) if options["truth"] else None
        if options["repeat_to"]:
            queries = repeat_queries(queries, options["repeat_to"])
            if truth is not None:
                truth = np.resize(truth, (queries.n, truth.shape[1]))
        report = measure(index, queries, _search_config(options), warmup=options["warmup"],
                         repeats=options["repeats"], truth=truth, dataset_name=Path(options["queries"]).stem)
        row = report.row()
        self.stdout.write(json.dumps(row, indent=2, default=str))
        if options["csv"]:
            write_csv([report], options["csv"])
        if options["latency_csv"]:
            write_latency_csv(report, options["latency_csv"], bins=options["bins"])

    def _handle_sweep(self, options):
        index = GraphIndex.load(options["index"])
        queries = _load_vectors(options["queries"])
        truth = load_ivecs(options["truth"]) if options["truth"] else None
        reports = sweep(index, queries, truth, options["axis"], _parse_values(options["values"]),
                        base_config=_search_config(options), warmup=options["warmup"],
                        repeats=options["repeats"], dataset_name=Path(options["queries"]).stem)
        for report in reports:
            recall = f"{report.recall_at_k:.4f}" if report.recall_at_k is not None else "n/a"
            self.stdout.write(
                f"{options['axis']}={report.config[options['axis']]} qps={report.qps:.1f} recall={recall}"
            )
        if options["csv"]:
            write_csv(reports, options["csv"])

    def _handle_compare_build(self, options):
        dataset = _load_vectors(options["input"])
        config = BuildConfig.from_settings(m0=options["m"], ef0=options["ef_construction"], seed=options["seed"])
        modes = [m.strip() for m in options["modes"].split(",") if m.strip()]
        reports = compare_builds(dataset, config, modes)
        for report in reports:
            speedup = f"{report.speedup_vs_baseline:.2f}x" if report.speedup_vs_baseline else "n/a"
            self.stdout.write(
                f"{report.mode}: {report.build_seconds:.2f}s M={report.m} "
                f"ef_construction={report.ef_construction} speedup={speedup}"
            )
        if options["csv"]:
            write_csv(reports, options["csv"])

    def _handle_kernel_bench(self, options):
        rows = kernel_benchmark(options["d"], options["pairs"], options["seed"])
        for row in rows:
            self.stdout.write(
                f"{row.tier:16s} {row.kernel:10s} {row.ns_per_pair:10.1f} ns/pair  {row.speedup_vs_scalar:6.1f}x"
            )
        if options["csv"]:
            write_csv(rows, options["csv"])

    def _handle_info(self, options):
        index = GraphIndex.load(options["index"])
        info = index.describe()
        info["audit"] = index.audit().to_dict()
        self.stdout.write(json.dumps(info, indent=2))

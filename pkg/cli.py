#!/usr/bin/env python3
"""
geoconcept command line: batch commands over the geo, classifier, concept
mapping and active-learning pipelines.

Exit codes: 0 success, 2 input-format error, 3 validation error,
4 invariant breach.
"""

import argparse
import logging
import sys
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

import active_sim
import classifier
import dataio
import geo_localizer
import geo_sampling
import osm_ingest
from concept_space import CosineSimilarity, WupSimilarity, expand_query
from config import MAX_SEED, RunConfig
from errors import InvariantError, ToolkitError, ValidationError
from geo_core import GeoPoint
from vector_index import l2_normalize

logger = logging.getLogger("geoconcept")

STRATEGIES = [s.value for s in active_sim.Strategy]


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValidationError(f"expected a comma-separated list of integers, got {text!r}")


def _normalized(records, normalize: bool):
    if not normalize or not records:
        return records
    X = l2_normalize(np.vstack([r.embedding for r in records]))
    return [geo_localizer.GeoRecord(r.id, r.location, x, r.label) for r, x in zip(records, X)]


def _select_partition(records, split_path, partition: str):
    if split_path is None:
        return records
    assignment = dataio.read_split(split_path)
    missing = [r.id for r in records if r.id not in assignment]
    if missing:
        raise ValidationError(f"{len(missing)} records have no partition in {split_path} (e.g. {missing[0]})")
    chosen = [r for r in records if assignment[r.id] == partition]
    if not chosen:
        raise ValidationError(f"no records in partition {partition!r}")
    return chosen


# ---------------------------------------------------------------------------
# Geo pipeline
# ---------------------------------------------------------------------------


def cmd_osm_extract(args, cfg: RunConfig):
    boundary = dataio.read_polygon(args.polygon) if args.polygon else None
    nodes, ways = osm_ingest.parse_osm(dataio.require_file(args.osm))
    selected, report = osm_ingest.select_street_nodes(nodes, ways, boundary)
    dataio.write_frame(dataio.points_frame([(n.id, n.location) for n in selected]), args.out)
    for warning in report.warnings:
        print(f"⚠️  {warning}")
    print(f"✅ Wrote {len(selected)} street nodes ({report.highway_ways} highway ways) to {args.out}")


def cmd_sample(args, cfg: RunConfig):
    cfg = cfg.override(seed=args.seed)
    rows = dataio.read_points(args.points)
    points = [p for _, p in rows]
    if args.method == "spread":
        chosen = geo_sampling.spread_indices(points, cfg.sampling(args.k))
    else:
        chosen = geo_sampling.random_indices(len(points), args.k, cfg.require_seed())
    picked = [rows[i] for i in chosen]
    dataio.write_frame(dataio.points_frame(picked), args.out)
    spacing = geo_sampling.min_pairwise_km([p for _, p in picked])
    print(f"✅ Sampled {len(picked)} of {len(rows)} points ({args.method}, min spacing {spacing:.3f} km) to {args.out}")


def cmd_split(args, cfg: RunConfig):
    cfg = cfg.override(seed=args.seed, cell_deg=args.cell_deg, train_fraction=args.train_frac)
    split_cfg = cfg.split()
    records = dataio.read_geo_records(args.records, with_embeddings=False)
    pairs = [(r.id, r.location) for r in records]
    assignment = geo_sampling.grid_split(pairs, split_cfg)
    leaking = geo_sampling.audit_split(pairs, assignment, split_cfg.cell_deg)
    if leaking:
        raise InvariantError(f"{len(leaking)} grid cells hold both partitions (e.g. {leaking[0]})")
    frame = pd.DataFrame(
        {"id": [r.id for r in records], "partition": [assignment[r.id].value for r in records]},
        columns=["id", "partition"],
    )
    dataio.write_frame(frame, args.out)
    n_train = int((frame["partition"] == geo_sampling.Partition.TRAIN.value).sum())
    print(f"✅ Split {len(frame)} records: {n_train} train / {len(frame) - n_train} test to {args.out}")


def cmd_synth(args, cfg: RunConfig):
    cfg = cfg.override(seed=args.seed)
    cities = dataio.read_cities(args.cities, args.per_city)
    records = geo_localizer.synth_dataset(cities, args.embed_dim, args.spread_km, args.noise, cfg.require_seed())
    dataio.write_geo_records(args.out, records, args.vectors_out)
    print(f"✅ Generated {len(records)} records over {len(cities)} cities to {args.out}")


def cmd_index(args, cfg: RunConfig):
    cfg = cfg.override(seed=args.seed, normalize=True if args.normalize else None)
    records = dataio.read_geo_records(args.records, args.vectors)
    records = _select_partition(records, args.split, args.partition)
    records = _normalized(records, cfg.normalize)
    pq_cfg = cfg.pq() if args.kind == "pq" else None
    index = geo_localizer.GeoIndex.build(records, pq_cfg)
    dataio.write_index(args.out, index, cfg.normalize)
    print(f"✅ Indexed {len(index)} records ({index.backend.kind}, dim {index.backend.dim}) to {args.out}")


def _query_records(args):
    if args.records:
        return dataio.read_geo_records(args.records, args.vectors)
    if not args.vectors:
        raise ValidationError("pass query --records or --vectors")
    X = dataio.read_vec1(args.vectors)
    ids = dataio.read_id_sidecar(args.ids, len(X)) if args.ids else [str(i) for i in range(len(X))]
    origin = GeoPoint(0.0, 0.0)
    return [geo_localizer.GeoRecord(i, origin, x) for i, x in zip(ids, X)]


def cmd_query(args, cfg: RunConfig):
    index, normalized = dataio.read_index(args.index)
    queries = _normalized(_query_records(args), normalized)
    rows = []
    for query in queries:
        estimate = geo_localizer.localize(query.embedding, index, args.nn)
        top = estimate.neighbors[0]
        rows.append(
            {
                "query": query.id,
                "lat": estimate.predicted.lat,
                "lon": estimate.predicted.lon,
                "nearest_id": index.records[top.id].id,
                "nearest_distance": top.distance,
            }
        )
    dataio.write_frame(pd.DataFrame(rows, columns=["query", "lat", "lon", "nearest_id", "nearest_distance"]), args.out)
    print(f"✅ Localized {len(rows)} queries with nn={args.nn} to {args.out}")


def cmd_evaluate(args, cfg: RunConfig):
    nn_choices = _int_list(args.nn) if args.nn else list(cfg.nn_choices)
    index, normalized = dataio.read_index(args.index)
    queries = dataio.read_geo_records(args.records, args.vectors)
    queries = _normalized(_select_partition(queries, args.split, args.partition), normalized)
    report = geo_localizer.evaluate(queries, index, nn_choices, args.aggregation)
    descriptor = args.descriptor or index.backend.kind
    outputs = [(geo_localizer.report_frame({descriptor: report}), args.out, {})]
    if args.per_label:
        outputs.append((geo_localizer.per_label_frame(report), args.per_label, {}))
    dataio.write_frames(outputs)
    first = report.rows[0]
    print(f"✅ Evaluated {first.queries} queries: nn={first.nn} acc@25km={first.acc_25km:.3f} -> {args.out}")


# ---------------------------------------------------------------------------
# Classifier pipeline
# ---------------------------------------------------------------------------


def _concepts(items, requested: Optional[str]) -> List[str]:
    if requested:
        return [c.strip() for c in requested.split(",") if c.strip()]
    return sorted({label for item in items for label in item.labels})


def cmd_train(args, cfg: RunConfig):
    cfg = cfg.override(seed=args.seed, svm_c=args.C, neg_ratio=args.neg_ratio)
    items = dataio.read_labeled_features(args.features, args.vectors)
    if not items:
        raise ValidationError(f"{args.features} holds no items")
    concepts = _concepts(items, args.concepts)
    models = classifier.train_all(concepts, items, cfg.train(), args.workers)
    dataio.write_models(args.out, models)
    print(f"✅ Trained {len(models)} concept models (neg ratio {cfg.neg_ratio}) to {args.out}")


def cmd_select_k(args, cfg: RunConfig):
    cfg = cfg.override(seed=args.seed, svm_c=args.C, cv_folds=args.folds)
    items = dataio.read_labeled_features(args.features, args.vectors)
    grid = [classifier.parse_neg_ratio(k) for k in args.k_grid.split(",") if k.strip()]
    best, per_k = classifier.select_k_by_cv(args.concept, items, cfg.train(), grid, cfg.cv_folds)
    frame = pd.DataFrame(
        {"k": [str(k) for k in per_k], "mean_f1": list(per_k.values()), "selected": [int(k == best) for k in per_k]},
        columns=["k", "mean_f1", "selected"],
    )
    dataio.write_frame(frame, args.out)
    print(f"✅ Best negative ratio for {args.concept}: {best} (F1 {per_k[best]:.3f}) -> {args.out}")


def _truth_and_predictions(args):
    if args.predictions:
        return dataio.read_predictions(args.predictions)
    if not (args.models and args.features):
        raise ValidationError("pass --predictions, or --models together with --features")
    models = dataio.read_models(args.models)
    items = dataio.read_labeled_features(args.features, args.vectors)
    if not items:
        raise ValidationError(f"{args.features} holds no items")
    X = np.vstack([item.features for item in items])
    return {m.concept: (np.array([item.has(m.concept) for item in items]), m.predict(X)) for m in models}


def cmd_rates(args, cfg: RunConfig):
    pairs = _truth_and_predictions(args)
    rates = {concept: classifier.binary_rates(t, p) for concept, (t, p) in pairs.items()}
    if not rates:
        raise ValidationError("no concepts to report")
    summary = None
    if args.summary:
        metrics = {concept: classifier.concept_metrics(t, p) for concept, (t, p) in pairs.items()}
        summary = classifier.metric_distribution(metrics)
    outputs = [(classifier.rates_frame(rates), args.out, {"index": True, "index_label": "rate"})]
    if summary is not None:
        outputs.append((summary, args.summary, {"index": True, "index_label": "stat"}))
    dataio.write_frames(outputs)
    average = classifier.aggregate_rates(list(rates.values()))
    print(f"✅ Rates for {len(rates)} concepts, average accuracy {average.accuracy:.3f} -> {args.out}")


def cmd_confusion(args, cfg: RunConfig):
    models = dataio.read_models(args.models)
    items = dataio.read_labeled_features(args.features, args.vectors)
    matrix = classifier.confusion(models, items)
    dataio.write_frame(matrix.to_frame(), args.out, index=True, index_label="truth")
    correct = int(np.trace(matrix.counts))
    print(f"✅ Confusion over {int(matrix.counts.sum())} items ({correct} on the diagonal) -> {args.out}")


# ---------------------------------------------------------------------------
# Concept mapping and active learning
# ---------------------------------------------------------------------------


def cmd_expand(args, cfg: RunConfig):
    cfg = cfg.override(expand_k=args.k)
    if args.mode == "wup":
        if not args.taxonomy:
            raise ValidationError("--mode wup needs --taxonomy")
        mode = WupSimilarity(dataio.read_taxonomy(args.taxonomy))
    else:
        if not args.lexicon:
            raise ValidationError("--mode cosine needs --lexicon")
        mode = CosineSimilarity(dataio.read_lexicon(args.lexicon, args.compose_phrases))
    bank = dataio.read_bank(args.bank) if args.bank else None
    result = expand_query(args.query, bank, mode, cfg.expand_k)
    frame = pd.DataFrame(
        {
            "rank": list(range(1, len(result.items) + 1)),
            "concept": result.concepts,
            "similarity": [s for _, s in result.items],
        },
        columns=["rank", "concept", "similarity"],
    )
    dataio.write_frame(frame, args.out)
    if result.skipped:
        print(f"⚠️  {len(result.skipped)} bank concepts not in the vocabulary")
    print(f"✅ {args.query} -> {', '.join(result.concepts) or '(none)'}")


def cmd_simulate_al(args, cfg: RunConfig):
    cfg = cfg.override(
        seed=args.seed, al_rounds=args.rounds, al_batch=args.batch, al_seed_count=args.seed_count
    )
    seed = cfg.require_seed()
    pool = dataio.read_labeled_features(args.features, args.vectors)
    test_set = dataio.read_labeled_features(args.test, args.test_vectors)
    strategies = STRATEGIES if args.strategy == "all" else [args.strategy]
    if args.repeats < 1:
        raise ValidationError("--repeats must be positive")

    frames, histories = [], {}
    for strategy in strategies:
        histories[strategy] = []
        for r in range(args.repeats):
            run_seed = (seed + r) % MAX_SEED
            history = active_sim.run(
                pool, test_set, args.concept, strategy, cfg.al_rounds, cfg.al_batch,
                cfg.cost(), cfg.override(seed=run_seed).train(), run_seed, cfg.al_seed_count,
            )
            histories[strategy].append(history)
            frame = active_sim.history_frame(history, strategy)
            frame.insert(1, "run", r)
            frames.append(frame)

    comparison = None
    if args.compare:
        comparison = active_sim.compare_strategies(histories, args.at_labeled, args.map_threshold)
    outputs = [(pd.concat(frames, ignore_index=True), args.out, {})]
    if comparison is not None:
        outputs.append((comparison, args.compare, {}))
    dataio.write_frames(outputs)
    print(f"✅ Simulated {len(strategies)} strategies x {args.repeats} runs -> {args.out}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="YAML file of RunConfig keys")
    common.add_argument("--verbose", action="store_true", help="Log at DEBUG level")

    parser = argparse.ArgumentParser(description="Geo-localization and concept detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("osm-extract", parents=[common], help="Street nodes from an OSM XML file")
    p.add_argument("--osm", required=True)
    p.add_argument("--polygon", help="lat,lon CSV boundary")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_osm_extract)

    p = sub.add_parser("sample", parents=[common], help="Spread (k-means medoid) or random point sample")
    p.add_argument("--points", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=["spread", "random"], default="spread")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("split", parents=[common], help="Grid-cell train/test split with leakage audit")
    p.add_argument("--records", required=True)
    p.add_argument("--cell-deg", type=float)
    p.add_argument("--train-frac", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("synth", parents=[common], help="Synthetic multi-city geotagged embeddings")
    p.add_argument("--out", required=True)
    p.add_argument("--vectors-out", help="Write embeddings to this VEC1 file and reference them by offset")
    p.add_argument("--cities", help="name,lat,lon[,count] CSV; default four European capitals")
    p.add_argument("--per-city", type=int, default=500)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--spread-km", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("index", parents=[common], help="Build an exact or PQ index over geo records")
    p.add_argument("--records", required=True)
    p.add_argument("--vectors")
    p.add_argument("--split", help="id,partition CSV from the split command")
    p.add_argument("--partition", default=geo_sampling.Partition.TRAIN.value)
    p.add_argument("--kind", choices=["exact", "pq"], default="exact")
    p.add_argument("--normalize", action="store_true", help="L2-normalize embeddings at ingest")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_index)

    p = sub.add_parser("query", parents=[common], help="Estimate locations for query embeddings")
    p.add_argument("--index", required=True)
    p.add_argument("--records", help="GeoRecord JSONL of queries")
    p.add_argument("--vectors", help="VEC1 query vectors (or offsets target for --records)")
    p.add_argument("--ids", help="id CSV naming the VEC1 rows")
    p.add_argument("--nn", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_query)

    p = sub.add_parser("evaluate", parents=[common], help="Distance error and accuracy at 1/25/200 km")
    p.add_argument("--index", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--vectors")
    p.add_argument("--split")
    p.add_argument("--partition", default=geo_sampling.Partition.TEST.value)
    p.add_argument("--nn", help="comma-separated neighbor counts, e.g. 1,5,9")
    p.add_argument("--aggregation", choices=list(geo_localizer.AGGREGATIONS), default="mean")
    p.add_argument("--descriptor")
    p.add_argument("--per-label", help="Also write the per-city breakdown here")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("train", parents=[common], help="One-versus-many linear SVMs per concept")
    p.add_argument("--features", required=True)
    p.add_argument("--vectors")
    p.add_argument("--concepts", help="comma-separated; default every label in the file")
    p.add_argument("--neg-ratio", help="negatives per positive, or 'max'")
    p.add_argument("--C", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("select-k", parents=[common], help="Choose the negative ratio by cross-validated F1")
    p.add_argument("--features", required=True)
    p.add_argument("--vectors")
    p.add_argument("--concept", required=True)
    p.add_argument("--k-grid", default=",".join(str(k) for k in classifier.DEFAULT_K_GRID))
    p.add_argument("--folds", type=int)
    p.add_argument("--C", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_select_k)

    p = sub.add_parser("rates", parents=[common], help="TP/TN/FP/FN/accuracy table per concept")
    p.add_argument("--predictions", help="concept,truth,predicted CSV")
    p.add_argument("--models")
    p.add_argument("--features")
    p.add_argument("--vectors")
    p.add_argument("--summary", help="Also write the metric distribution across concepts here")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_rates)

    p = sub.add_parser("confusion", parents=[common], help="Truth x prediction counts over single-label items")
    p.add_argument("--models", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--vectors")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_confusion)

    p = sub.add_parser("expand", parents=[common], help="Map a query term onto the concept bank")
    p.add_argument("--query", required=True)
    p.add_argument("--mode", choices=["wup", "cosine"], required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--lexicon")
    p.add_argument("--compose-phrases", action="store_true")
    p.add_argument("--bank", help="one concept label per line; default the whole vocabulary")
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_expand)

    p = sub.add_parser("simulate-al", parents=[common], help="Active-learning simulation with a time-cost model")
    p.add_argument("--features", required=True, help="unlabeled pool (labels act as the oracle)")
    p.add_argument("--vectors")
    p.add_argument("--test", required=True)
    p.add_argument("--test-vectors")
    p.add_argument("--concept", required=True)
    p.add_argument("--strategy", choices=STRATEGIES + ["all"], default="all")
    p.add_argument("--rounds", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed-count", type=int)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--compare", help="Also write the strategy comparison here")
    p.add_argument("--at-labeled", type=int, default=250)
    p.add_argument("--map-threshold", type=float, default=0.9)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_simulate_al)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        args.handler(args, cfg)
    except ToolkitError as e:
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"❌ {e}", file=sys.stderr)
        return ValidationError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

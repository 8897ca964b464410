"""Experiment orchestration: ingest -> split -> target -> attacks -> metrics -> defense.

Every artifact lands under ``<output>/<name>-<config digest>/``. Target encoders are
cached by (dataset, pooling, seed) and reused on rerun.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import property_attack as pa
from .. import reconstruction as rc
from .. import subgraph_attack as sa
from ..defense import sweep
from ..graphs import GraphDataset, build_bucket_scheme, degree_onehot_features, load_tudataset, split_dataset
from ..models import EncoderConfig, TrainConfig, TrainedEncoder, train_target
from ..sampling import SamplerSpec
from .config import ExperimentConfig

log = logging.getLogger(__name__)

TABLES = ("property", "subgraph", "reconstruct", "defense", "target")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class AccessLog:
    """Records which split role each stage read; used to assert the leakage guard."""

    entries: list[tuple[str, str, str]] = field(default_factory=list)

    def record(self, stage: str, dataset: str, role: str):
        self.entries.append((stage, dataset, role))

    def roles_for(self, stage_prefix: str) -> set[str]:
        return {role for stage, _, role in self.entries if stage.startswith(stage_prefix)}

    def violations(self) -> list[tuple[str, str, str]]:
        """Attack-training stages may only read the auxiliary split."""
        return [e for e in self.entries if e[0].endswith(":train") and e[0] != "target:train"
                and e[2] != "attack_train"]


class SplitView:
    def __init__(self, ds: GraphDataset, seed: int, access: AccessLog):
        self.ds = ds
        self.split = split_dataset(ds, seed)
        self.access = access

    def graphs(self, role: str, stage: str):
        self.access.record(stage, self.ds.name, role)
        return self.ds.subset(getattr(self.split, role))


def write_rows(path: Path, rows: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    keys = list(rows[0].keys())
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def read_rows(path: Path) -> list[dict]:
    if not path.exists() or path.stat().st_size == 0:
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class Runner:
    def __init__(self, config: ExperimentConfig, output_dir: str | Path = "runs"):
        self.config = config.validate()
        self.run_dir = Path(output_dir) / f"{config.name}-{config.digest()}"
        self.access = AccessLog()
        self._datasets: dict[str, GraphDataset] = {}
        self._views: dict[tuple, SplitView] = {}
        self._targets: dict[tuple, TrainedEncoder] = {}

    # ----------------------------------------------------------------- plumbing

    def _stage(self, stage, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:  # noqa: BLE001 - any failure aborts with the stage tag
            raise StageError(stage, exc) from exc

    def seed_for(self, run: int) -> int:
        return self.config.seed + run

    def dataset(self, name: str) -> GraphDataset:
        if name not in self._datasets:
            ds = self._stage(f"ingest:{name}", load_tudataset, self.config.dataset_root, name)
            if self.config.degree_features:
                dmax = max(int(g.degrees.max()) if g.num_nodes else 0 for g in ds.graphs)
                ds = GraphDataset(ds.name, [degree_onehot_features(g, dmax) for g in ds.graphs], ds.num_classes)
            self._datasets[name] = ds
        return self._datasets[name]

    def view(self, name: str, run: int) -> SplitView:
        key = (name, run)
        if key not in self._views:
            self._views[key] = SplitView(self.dataset(name), self.seed_for(run), self.access)
        return self._views[key]

    def encoder_config(self, ds: GraphDataset, pooling: str, graphs) -> EncoderConfig:
        return EncoderConfig(in_dim=ds.feature_dim, num_classes=ds.num_classes,
                             hidden_dim=self.config.training.hidden_dim, pooling=pooling,
                             max_nodes=max(g.num_nodes for g in graphs))

    def target(self, name: str, pooling: str, run: int) -> TrainedEncoder:
        key = (name, pooling, run)
        if key in self._targets:
            return self._targets[key]
        seed = self.seed_for(run)
        path = self.run_dir / "encoders" / f"{name}_{pooling}_seed{seed}.pt"
        if path.exists():
            enc = TrainedEncoder.load(path)
        else:
            view = self.view(name, run)
            graphs = view.graphs("target_train", "target:train")
            t = self.config.training
            cfg = self.encoder_config(view.ds, pooling, graphs)
            enc = self._stage(f"train-target:{name}:{pooling}", train_target, graphs, cfg,
                              TrainConfig(epochs=t.target_epochs, lr=t.target_lr,
                                          batch_size=t.target_batch_size, patience=t.target_patience),
                              seed)
            path.parent.mkdir(parents=True, exist_ok=True)
            enc.save(path)
        self._targets[key] = enc
        return enc

    def _embeddings(self, name, pooling, run, role, stage) -> tuple[list, np.ndarray]:
        graphs = self.view(name, run).graphs(role, stage)
        enc = self.target(name, pooling, run)
        path = self.run_dir / "embeddings" / f"{name}_{pooling}_seed{self.seed_for(run)}_{role}.npy"
        if path.exists():
            emb = np.load(path)
        else:
            emb = enc.encode_many(graphs)
            path.parent.mkdir(parents=True, exist_ok=True)
            np.save(path, emb)
        return graphs, emb

    # ----------------------------------------------------------------- stages

    def target_rows(self, name, pooling, run) -> list[dict]:
        enc = self.target(name, pooling, run)
        test = self.view(name, run).graphs("attack_test", "target:eval")
        return [{"dataset": name, "pooling": pooling, "run": run,
                 "test_accuracy": round(enc.accuracy(test), 6),
                 "epochs": enc.metadata.get("epochs"), "final_loss": enc.metadata.get("final_loss")}]

    def property_rows(self, name, pooling, run) -> list[dict]:
        t = self.config.training
        aux, x_aux = self._embeddings(name, pooling, run, "attack_train", "property:train")
        rows = []
        for k in self.config.k_list:
            schemes = pa.make_schemes(aux, k, self.config.properties)
            _, y_aux = pa.build_training_set(aux, None, schemes, embeddings=x_aux)
            test, x_test = self._embeddings(name, pooling, run, "attack_test", "property:eval")
            skip = self.config.property_skip_single_class
            if skip and not any(len(np.unique(y)) > 1 for y in y_aux.values()):
                log.warning("%s/%s k=%d: every property has a single class; baselines only", name, pooling, k)
                acc = {}
            else:
                attack = self._stage(f"attack-property:{name}:{pooling}:k{k}", pa.train, x_aux, y_aux, schemes,
                                     epochs=t.property_epochs, seed=self.seed_for(run), skip_single_class=skip)
                acc = attack.evaluate_accuracy(x_test, pa.property_labels(test, schemes))
                self._save_model(attack.net, f"property_{name}_{pooling}_k{k}_seed{self.seed_for(run)}.pt")
            for prop in self.config.properties:
                base = {"dataset": name, "pooling": pooling, "run": run, "property": prop, "k": k}
                if prop in acc:
                    rows.append({**base, "method": "attack", "accuracy": round(acc[prop], 6)})
                rows.append({**base, "method": "random", "accuracy": round(pa.baseline_random(k), 6)})
                if prop in schemes:
                    rows.append({**base, "method": "summarize",
                                 "accuracy": round(pa.baseline_summarize(aux, test, schemes[prop]), 6)})
        return rows

    def subgraph_samples(self, name, pooling, run, sampler: SamplerSpec, aux_name=None):
        """Training samples from ``aux_name`` (default: same dataset) and test samples from ``name``."""
        aux_name = aux_name or name
        seed = self.seed_for(run)
        aux_graphs = self.view(aux_name, run).graphs("attack_train", "subgraph:train")
        aux_emb = self.target(name, pooling, run).encode_many(aux_graphs)
        train = sa.generate_samples(aux_graphs, None, sampler.with_seed(1000 * seed + 1), embeddings=aux_emb)
        test_graphs, x_test = self._embeddings(name, pooling, run, "attack_test", "subgraph:eval")
        test = sa.generate_samples(test_graphs, None, sampler.with_seed(1000 * seed + 2), embeddings=x_test)
        return train, test

    def train_subgraph(self, name, pooling, run, samples, strategy, extractor_pooling=None, baseline=False):
        t = self.config.training
        enc = self.target(name, pooling, run)
        ds = self.dataset(name)
        if baseline:
            return sa.train(samples, strategy, frozen_extractor=enc, epochs=t.subgraph_epochs,
                            seed=self.seed_for(run))
        cfg = EncoderConfig(in_dim=ds.feature_dim, num_classes=ds.num_classes, hidden_dim=enc.embedding_dim,
                            pooling=extractor_pooling or pooling, max_nodes=enc.config.max_nodes)
        return sa.train(samples, strategy, extractor_config=cfg, epochs=t.subgraph_epochs,
                        seed=self.seed_for(run))

    def subgraph_rows(self, name, pooling, run) -> list[dict]:
        rows = []
        for sc in self.config.samplers:
            sampler = SamplerSpec(sc.method, sc.ratio)
            train, test = self.subgraph_samples(name, pooling, run, sampler)
            arms = [(s, False) for s in self.config.strategies]
            if self.config.subgraph_baseline:
                arms.append(("difference", True))
            for strategy, baseline in arms:
                stage = f"attack-subgraph:{name}:{pooling}:{sc.method}:{sc.ratio}:{strategy}"
                attack = self._stage(stage, self.train_subgraph, name, pooling, run, train, strategy,
                                     baseline=baseline)
                rows.append({"dataset": name, "pooling": pooling, "run": run, "sampler": sc.method,
                             "ratio": sc.ratio, "strategy": strategy,
                             "method": "baseline" if baseline else "attack",
                             "auc": round(attack.evaluate_auc(test), 6)})
                if not baseline:
                    self._save_model(attack.net, f"subgraph_{name}_{pooling}_{sc.method}_{sc.ratio}_"
                                                 f"{strategy}_seed{self.seed_for(run)}.pt")
        return rows

    def _recon_graphs(self, name, pooling, run, role, stage):
        graphs, emb = self._embeddings(name, pooling, run, role, stage)
        cap = self.config.recon_max_nodes
        keep = [i for i, g in enumerate(graphs) if cap is None or g.num_nodes <= cap]
        return [graphs[i] for i in keep], emb[keep], len(graphs) - len(keep)

    def train_reconstruction(self, name, pooling, run):
        t = self.config.training
        seed = self.seed_for(run)
        aux, x_aux, dropped = self._recon_graphs(name, pooling, run, "attack_train", "reconstruct:train")
        cfg = rc.ReconConfig(hidden_dim=self.config.training.hidden_dim, epochs=t.recon_epochs,
                             max_nodes=self.config.recon_max_nodes, seed=seed)
        ae_path = self.run_dir / "attacks" / f"autoencoder_{name}_seed{seed}.pt"
        ae = self._stage(f"attack-reconstruct:{name}:autoencoder", rc.train_autoencoder, aux, cfg)
        enc = self.target(name, pooling, run)
        tuned = self._stage(f"attack-reconstruct:{name}:{pooling}:finetune", rc.fine_tune_decoder, ae, aux,
                            enc, epochs=t.finetune_epochs, seed=seed, embeddings=x_aux)
        ae_path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({"encoder": ae.encoder.state_dict(), "decoder": ae.decoder.state_dict(),
                    "n_max": ae.n_max}, ae_path)
        self._save_model(tuned.decoder, f"decoder_{name}_{pooling}_seed{seed}.pt")
        return tuned, dropped

    def reconstruct_rows(self, name, pooling, run) -> list[dict]:
        tuned, dropped = self.train_reconstruction(name, pooling, run)
        test, x_test, dropped_test = self._recon_graphs(name, pooling, run, "attack_test", "reconstruct:eval")
        res = rc.evaluate_reconstruction(tuned, test, x_test)
        self._save_reconstructions(name, pooling, run, tuned, x_test)
        base = {"dataset": name, "pooling": pooling, "run": run}
        rows = [{**base, "metric": "wl_kernel", "value": round(res["wl_kernel"], 6)}]
        for stat, row in res["stats"].items():
            for kind, v in row.items():
                rows.append({**base, "metric": f"{stat}.{kind}", "value": round(v, 6)})
        rows.append({**base, "metric": "skipped_large_graphs", "value": dropped + dropped_test})
        return rows

    def _save_reconstructions(self, name, pooling, run, ae, embeddings):
        path = self.run_dir / "reconstructions" / f"{name}_{pooling}_seed{self.seed_for(run)}.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for gi, h in enumerate(embeddings):
                g = ae.reconstruct(h)
                fh.write(f"# graph {gi} nodes {g.num_nodes}\n")
                fh.writelines(f"{i} {j}\n" for i, j in g.edges)

    def _save_model(self, module, filename):
        path = self.run_dir / "attacks" / filename
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(module.state_dict(), path)

    def defense_rows(self, name, pooling, run) -> list[dict]:
        d = self.config.defense
        seed = self.seed_for(run)
        t = self.config.training
        aux, x_aux = self._embeddings(name, pooling, run, "attack_train", "defense:train")
        test, x_test = self._embeddings(name, pooling, run, "attack_test", "defense:eval")
        scheme = self._stage("defend:property", build_bucket_scheme, aux, d.property_name, d.k)
        schemes = {d.property_name: scheme}
        _, y_aux = pa.build_training_set(aux, None, schemes, embeddings=x_aux)
        # the defense curve is reported even if every auxiliary graph falls in one bucket
        prop = self._stage("defend:property", pa.train, x_aux, y_aux, schemes, epochs=t.property_epochs,
                           seed=seed, skip_single_class=False)
        y_test = pa.property_labels(test, schemes)
        sampler = SamplerSpec(d.sampler.method, d.sampler.ratio)
        s_train, s_test = self.subgraph_samples(name, pooling, run, sampler)
        sub = self._stage("defend:subgraph", self.train_subgraph, name, pooling, run, s_train, "difference")
        enc = self.target(name, pooling, run)
        labels = np.array([g.label for g in test])
        evaluators = {
            "property_accuracy": lambda z: prop.evaluate_accuracy(z, y_test)[d.property_name],
            # subgraph samples come in (positive, negative) pairs per test graph
            "subgraph_auc": lambda z: sub.evaluate_auc(s_test, np.repeat(z, 2, axis=0)),
            "classification_accuracy": lambda z: float((enc.classify_embeddings(z) == labels).mean()),
        }
        if d.reconstruct:
            recon, _ = self.train_reconstruction(name, pooling, run)
            cap = self.config.recon_max_nodes
            keep = [i for i, g in enumerate(test) if cap is None or g.num_nodes <= cap]
            r_test = [test[i] for i in keep]
            cache = {}

            def recon_metric(z, key):
                ident = id(z)
                if ident not in cache:
                    cache.clear()
                    cache[ident] = rc.evaluate_reconstruction(recon, r_test, z[keep])
                res = cache[ident]
                return res["wl_kernel"] if key == "wl" else res["stats"]["degree"]["cosine"]

            if r_test:
                evaluators["reconstruct_wl_kernel"] = lambda z: recon_metric(z, "wl")
                evaluators["reconstruct_degree_cosine"] = lambda z: recon_metric(z, "degree")
        rows = []
        for res in self._stage(f"defend:{name}:{pooling}", sweep, x_test, d.betas, evaluators, seed):
            beta = res.pop("beta")
            rows += [{"dataset": name, "pooling": pooling, "run": run, "beta": beta,
                      "metric": m, "value": round(v, 6)} for m, v in res.items()]
        return rows

    # ----------------------------------------------------------------- transfers

    def transfer_results(self) -> dict:
        tr = self.config.transfer
        out: dict = {}
        run = 0
        if tr.samplers:
            out["sampler"] = {}
            for name in self.config.datasets:
                for pooling in self.config.poolings:
                    specs = {m: SamplerSpec(m, tr.ratio) for m in tr.samplers}
                    pairs = {m: self.subgraph_samples(name, pooling, run, s) for m, s in specs.items()}
                    grid = {}
                    for m_train, (train, _) in pairs.items():
                        attack = self._stage(f"transfer-sampler:{name}:{m_train}", self.train_subgraph,
                                             name, pooling, run, train, "difference")
                        grid[m_train] = {m_test: round(attack.evaluate_auc(test), 6)
                                         for m_test, (_, test) in pairs.items()}
                    out["sampler"][f"{name}/{pooling}"] = grid
        if tr.models:
            out["model"] = {}
            for name in self.config.datasets:
                sampler = SamplerSpec("random_walk", tr.ratio)
                grid = {}
                for target_pool in tr.models:
                    train, test = self.subgraph_samples(name, target_pool, run, sampler)
                    grid[target_pool] = {}
                    for extractor_pool in tr.models:
                        attack = self._stage(f"transfer-model:{name}:{target_pool}->{extractor_pool}",
                                             self.train_subgraph, name, target_pool, run, train, "difference",
                                             extractor_pooling=extractor_pool)
                        grid[target_pool][extractor_pool] = round(attack.evaluate_auc(test), 6)
                out["model"][name] = grid
        if tr.datasets:
            out["dataset"] = {}
            for src, dst in tr.datasets:
                for pooling in self.config.poolings:
                    out["dataset"][f"{src}->{dst}/{pooling}"] = self._dataset_transfer(src, dst, pooling, run)
        return out

    def _dataset_transfer(self, src, dst, pooling, run) -> dict:
        """Target model and test graphs from ``dst``; auxiliary graphs from ``src``."""
        if self.dataset(src).feature_dim != self.dataset(dst).feature_dim:
            raise StageError(f"transfer-dataset:{src}->{dst}",
                             ValueError("datasets have different feature dimensions"))
        enc = self.target(dst, pooling, run)
        aux = self.view(src, run).graphs("attack_train", "transfer:train")
        test, x_test = self._embeddings(dst, pooling, run, "attack_test", "transfer:eval")
        x_aux = enc.encode_many(aux)
        result = {}
        if "property" in self.config.attacks:
            k = self.config.k_list[0]
            schemes = pa.make_schemes(aux, k, self.config.properties)
            _, y_aux = pa.build_training_set(aux, None, schemes, embeddings=x_aux)
            attack = pa.train(x_aux, y_aux, schemes, epochs=self.config.training.property_epochs,
                              seed=self.seed_for(run))
            result["property_accuracy"] = {p: round(v, 6) for p, v in
                                           attack.evaluate_accuracy(x_test, pa.property_labels(test, schemes)).items()}
            result["k"] = k
        if "subgraph" in self.config.attacks:
            train, test_samples = self.subgraph_samples(dst, pooling, run,
                                                        SamplerSpec("random_walk", self.config.transfer.ratio),
                                                        aux_name=src)
            attack = self.train_subgraph(dst, pooling, run, train, "difference")
            result["subgraph_auc"] = round(attack.evaluate_auc(test_samples), 6)
        return result

    # ----------------------------------------------------------------- driver

    def cell(self, name, pooling, run, attacks=None) -> dict[str, list[dict]]:
        """All configured attacks for one (dataset, pooling, seed); sequential inside the cell."""
        attacks = self.config.attacks if attacks is None else attacks
        out = {"target": self.target_rows(name, pooling, run)}
        if "property" in attacks:
            out["property"] = self.property_rows(name, pooling, run)
        if "subgraph" in attacks:
            out["subgraph"] = self.subgraph_rows(name, pooling, run)
        if "reconstruct" in attacks:
            out["reconstruct"] = self.reconstruct_rows(name, pooling, run)
        return out

    def cells(self):
        return [(n, p, r) for n in self.config.datasets for p in self.config.poolings
                for r in range(self.config.runs)]

    def run(self, workers: int = 1, attacks=None, defend: bool | None = None,
            transfer: bool | None = None) -> dict[str, list[dict]]:
        """Run every (dataset, pooling, seed) cell, then the defense sweep and transfer matrices.

        ``attacks`` overrides the configured attack list; ``defend`` and ``transfer`` default
        to whatever the config enables. Tables collected before a failing stage are still
        written before the stage error propagates.
        """
        start = time.time()
        attacks = self.config.attacks if attacks is None else list(attacks)
        if defend is None:
            defend = self.config.defense is not None
        if transfer is None:
            tr = self.config.transfer
            transfer = bool(tr.samplers or tr.models or tr.datasets)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "config.json").write_text(json.dumps(self.config.to_dict(), indent=2, sort_keys=True))
        produced = ["target"] + [a for a in attacks if a in TABLES] + (["defense"] if defend else [])
        tables: dict[str, list[dict]] = {k: [] for k in produced}
        try:
            cells = self.cells()
            if workers > 1:
                with ProcessPoolExecutor(workers) as pool:
                    futures = [pool.submit(_run_cell, self.config, self.run_dir.parent, c, attacks) for c in cells]
                    for f in futures:
                        res, entries = f.result()
                        self.access.entries.extend(entries)
                        for k, rows in res.items():
                            tables[k].extend(rows)
            else:
                for c in cells:
                    for k, rows in self.cell(*c, attacks=attacks).items():
                        tables[k].extend(rows)
            if defend:
                if self.config.defense is None:
                    raise StageError("defend", ValueError("config has no defense section"))
                tables["defense"] = self.defense_table()
            if transfer:
                result = self.transfer_results()
                path = self.run_dir / "tables" / "transfer.json"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(json.dumps(result, indent=2, sort_keys=True))
        finally:
            for k, rows in tables.items():
                write_rows(self.run_dir / "tables" / f"{k}.csv", rows)
            (self.run_dir / "access_log.json").write_text(json.dumps(self.access.entries, indent=1))
        log.info("run finished in %.1fs -> %s", time.time() - start, self.run_dir)
        return tables

    def defense_table(self) -> list[dict]:
        d = self.config.defense
        rows = []
        for name in d.datasets or self.config.datasets:
            for pooling in d.poolings or self.config.poolings:
                for run in range(self.config.runs):
                    rows += self.defense_rows(name, pooling, run)
        return rows


def _run_cell(config, out_root, cell, attacks):
    runner = Runner(config, out_root)
    return runner.cell(*cell, attacks=attacks), runner.access.entries


def load_tables(run_dir: str | Path) -> dict[str, list[dict]]:
    run_dir = Path(run_dir)
    tables = {k: read_rows(run_dir / "tables" / f"{k}.csv") for k in TABLES}
    transfer = run_dir / "tables" / "transfer.json"
    if transfer.exists():
        tables["transfer"] = json.loads(transfer.read_text())
    return tables


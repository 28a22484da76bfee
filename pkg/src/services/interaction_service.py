import hashlib
import math
import re
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pandas.errors import EmptyDataError, ParserError

from src.core.errors import (
    ConfigurationError,
    DataFormatError,
    EmptyAfterFilterError,
    EmptyDatasetError,
    InsufficientCellsError,
)
from src.core.logging import logger
from src.schemas.interactions import (
    EvalSplit,
    InteractionMatrix,
    NoiseConfig,
    SplitBundle,
    SplitProtocol,
)

MATRIX_MAGIC = "LAREX"
# Normalized column names that mark a header line
HEADER_TOKENS = {
    "user", "userid", "uid", "item", "itemid", "iid",
    "movie", "movieid", "business", "businessid", "product", "productid", "asin",
    "reviewer", "reviewerid", "customer", "customerid", "book", "bookid",
    "track", "trackid", "song", "songid", "artist", "artistid",
}
HEADER_SAMPLE = 100
COLUMNS = ["user", "item", "rating", "timestamp"]
SEPARATORS = {"tsv": r"\s+", "csv": ","}

# Below this many cells the zero cells are enumerated; above it they are rejection-sampled
ENUMERATE_CELL_LIMIT = 4_000_000

BUNDLE_META = "bundle.tsv"


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _header_token(value: object) -> str:
    return re.sub(r"[\s_\-]", "", str(value).strip().lower())


def _is_number(value: object) -> bool:
    if not isinstance(value, str):
        return False
    try:
        float(value)
    except ValueError:
        return False
    return True


class InteractionService:
    """Event-log ingestion, filtering, splitting and noise injection for interaction matrices"""

    @staticmethod
    def ingest(path: Path, fmt: str = "tsv", threshold: Optional[float] = None) -> InteractionMatrix:
        """
        Read an event log into a binary interaction matrix.

        Columns are user, item and optionally rating and timestamp. A header line
        is detected and skipped. Index maps follow first appearance in the file.

        Args:
            path: Event log file
            fmt: "tsv" (tab or whitespace separated) or "csv"
            threshold: Keep only records with rating >= threshold

        Returns:
            InteractionMatrix with duplicates collapsed

        Raises:
            FileNotFoundError: If the file does not exist
            DataFormatError: Malformed record (carries the line number)
            EmptyDatasetError: No records survive
        """
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Input file {path} not found")
        if fmt not in SEPARATORS:
            raise ConfigurationError(f"Unknown format '{fmt}' (expected one of {sorted(SEPARATORS)})")

        try:
            frame = pd.read_csv(
                path,
                sep=SEPARATORS[fmt],
                header=None,
                names=COLUMNS,
                dtype=str,
                skip_blank_lines=False,
                keep_default_na=False,
                na_values=[""],
                engine="python",
            )
        except EmptyDataError as e:
            raise EmptyDatasetError(f"{path} is empty") from e
        except ParserError as e:
            match = re.search(r"line (\d+)", str(e))
            raise DataFormatError(
                f"{path}: malformed record ({e})", line=int(match.group(1)) if match else None
            ) from e

        # Row k of the frame is line k + 1 of the file
        frame["line"] = np.arange(1, len(frame) + 1)
        frame = frame[~frame[COLUMNS].isna().all(axis=1)]
        if frame.empty:
            raise EmptyDatasetError(f"{path} contains no records")

        if InteractionService._looks_like_header(frame):
            frame = frame.iloc[1:]

        missing = frame["user"].isna() | frame["item"].isna()
        if missing.any():
            line = int(frame.loc[missing, "line"].iloc[0])
            raise DataFormatError(f"{path}: record needs user and item fields", line=line)

        if threshold is not None:
            ratings = pd.to_numeric(frame["rating"], errors="coerce")
            bad = ratings.isna()
            if bad.any():
                line = int(frame.loc[bad, "line"].iloc[0])
                raise DataFormatError(f"{path}: rating is missing or not numeric", line=line)
            frame = frame[ratings >= threshold]

        if frame.empty:
            raise EmptyDatasetError(f"{path}: no records left after applying the rating threshold")

        user_codes, user_ids = pd.factorize(frame["user"], sort=False)
        item_codes, item_ids = pd.factorize(frame["item"], sort=False)
        X = InteractionMatrix.from_pairs(
            user_codes, item_codes, [str(u) for u in user_ids], [str(i) for i in item_ids]
        )
        logger.info(
            "Ingested %s: %d records -> %d users x %d items, %d interactions",
            path.name, len(frame), X.rows, X.cols, X.nnz
        )
        return X

    @staticmethod
    def _looks_like_header(frame: pd.DataFrame) -> bool:
        """
        Whether the first record is a column header.

        A header names a known id column, carries a non-numeric rating, or has
        non-numeric ids above records whose ids are all numeric.
        """
        first = frame.iloc[0]
        user = _header_token(first["user"])
        item = _header_token(first["item"])
        if user in HEADER_TOKENS or item in HEADER_TOKENS:
            return True
        rating = first["rating"]
        if isinstance(rating, str) and not _is_number(rating):
            return True
        rest = frame.iloc[1:HEADER_SAMPLE + 1]
        if rest.empty or _is_number(first["user"]) or _is_number(first["item"]):
            return False
        return bool(rest["user"].map(_is_number).all() and rest["item"].map(_is_number).all())

    @staticmethod
    def k_core(X: InteractionMatrix, k_user: int, k_item: int) -> InteractionMatrix:
        """
        Iteratively drop users with degree < k_user and items with degree < k_item.

        Each pass removes all offending users and items at once, until a fixed point.

        Raises:
            ConfigurationError: If k_user or k_item < 1
            EmptyAfterFilterError: If nothing survives
        """
        if k_user < 1 or k_item < 1:
            raise ConfigurationError("k_user and k_item must be at least 1")

        csr = X.matrix
        keep_users = np.ones(X.rows, dtype=bool)
        keep_items = np.ones(X.cols, dtype=bool)
        passes = 0
        while True:
            sub = csr[keep_users][:, keep_items]
            user_deg = np.diff(sub.indptr)
            item_deg = np.bincount(sub.indices, minlength=sub.shape[1])
            bad_users = user_deg < k_user
            bad_items = item_deg < k_item
            if not bad_users.any() and not bad_items.any():
                break
            keep_users[np.flatnonzero(keep_users)[bad_users]] = False
            keep_items[np.flatnonzero(keep_items)[bad_items]] = False
            passes += 1
            if not keep_users.any() or not keep_items.any():
                raise EmptyAfterFilterError(
                    f"{k_user}/{k_item}-core filtering removed every user or item"
                )

        result = InteractionService.submatrix(X, np.flatnonzero(keep_users), np.flatnonzero(keep_items))
        if result.nnz == 0:
            raise EmptyAfterFilterError(f"{k_user}/{k_item}-core filtering removed every interaction")
        logger.info(
            "k-core (%d, %d): %d passes, %d -> %d users, %d -> %d items",
            k_user, k_item, passes, X.rows, result.rows, X.cols, result.cols
        )
        return result

    @staticmethod
    def submatrix(X: InteractionMatrix, users: np.ndarray, items: np.ndarray) -> InteractionMatrix:
        """Restrict to the given user and item indices (kept in the given order)"""
        sub = X.matrix[users][:, items].tocsr()
        sub.sort_indices()
        return InteractionMatrix(
            matrix=sub,
            user_ids=[X.user_ids[u] for u in users],
            item_ids=[X.item_ids[i] for i in items],
        )

    @staticmethod
    def split(
        X: InteractionMatrix,
        protocol: SplitProtocol,
        ratios: Sequence[float] = (0.8, 0.1, 0.1),
        foldin_fraction: float = 0.8,
        seed: int = 0,
    ) -> SplitBundle:
        """
        Build train / validation / test sets.

        Strong: users are partitioned by the ratios; each evaluation user's
        interactions are shuffled and split into fold-in (ceil of foldin_fraction,
        at least one held out) and held-out. Weak: each user's interactions are
        split into train and held-out by the ratios; fold-in is the user's train row.
        With two ratios there is no validation set.

        Items that never occur in the training matrix are removed from every part.

        Raises:
            ConfigurationError: Bad ratios or fold-in fraction
            EmptyAfterFilterError: A required part ends up empty
        """
        ratios = [float(r) for r in ratios]
        if len(ratios) not in (2, 3) or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigurationError(f"ratios must be 2 or 3 non-negative values summing to 1, got {ratios}")
        if not 0.0 < foldin_fraction < 1.0:
            raise ConfigurationError("foldin_fraction must be in (0, 1)")

        rng = np.random.default_rng(seed)
        if protocol == SplitProtocol.STRONG:
            train_full, parts = InteractionService._strong_parts(X, ratios, foldin_fraction, rng)
        else:
            train_full, parts = InteractionService._weak_parts(X, ratios, rng)

        bundle = InteractionService._assemble(X, train_full, parts, protocol, seed)
        logger.info(
            "%s split (seed %d): %d train users, %s validation users, %d test users, %d items",
            protocol.value, seed, bundle.train.rows,
            bundle.validation.users if bundle.validation else "no",
            bundle.test.users, bundle.train.cols
        )
        return bundle

    @staticmethod
    def _strong_parts(X: InteractionMatrix, ratios: List[float], foldin_fraction: float, rng):
        """Partition users, then split each evaluation user's items into fold-in and held-out"""
        m = X.rows
        order = rng.permutation(m)
        if len(ratios) == 3:
            n_val = _round_half_up(m * ratios[1])
            n_test = _round_half_up(m * ratios[2])
        else:
            n_val = 0
            n_test = _round_half_up(m * ratios[1])
        n_train = m - n_val - n_test
        if n_train < 1 or n_test < 1:
            raise EmptyAfterFilterError(f"{m} users are too few for ratios {ratios}")

        train_users = np.sort(order[:n_train])
        groups = {"test": np.sort(order[n_train + n_val:])}
        if len(ratios) == 3:
            groups["validation"] = np.sort(order[n_train:n_train + n_val])

        parts: Dict[str, _Part] = {}
        for name in ("validation", "test"):
            if name not in groups:
                continue
            users, foldin, heldout = [], [], []
            excluded = 0
            for u in groups[name]:
                items = X.user_items(u)
                d = len(items)
                if d < 2:
                    excluded += 1
                    continue
                shuffled = rng.permutation(items)
                n_fold = min(math.ceil(round(foldin_fraction * d, 9)), d - 1)
                users.append(int(u))
                foldin.append(shuffled[:n_fold])
                heldout.append(shuffled[n_fold:])
            if excluded:
                logger.warning("Excluded %d %s users with a single interaction", excluded, name)
            parts[name] = (users, foldin, heldout)

        train_full = InteractionService.submatrix(X, train_users, np.arange(X.cols))
        return train_full, parts

    @staticmethod
    def _weak_parts(X: InteractionMatrix, ratios: List[float], rng):
        """Split every user's items into train and held-out; held-out may be split again"""
        train_rows: List[np.ndarray] = []
        train_cols: List[np.ndarray] = []
        train_lists: Dict[int, np.ndarray] = {}
        val_lists: Dict[int, np.ndarray] = {}
        test_lists: Dict[int, np.ndarray] = {}
        eval_share = sum(ratios[1:])

        for u in range(X.rows):
            items = X.user_items(u)
            d = len(items)
            shuffled = rng.permutation(items)
            n_held = min(d - 1, _round_half_up(d * eval_share)) if d > 1 else 0
            n_train = d - n_held
            train_lists[u] = np.sort(shuffled[:n_train])
            train_rows.append(np.full(n_train, u, dtype=np.int64))
            train_cols.append(train_lists[u])
            held = shuffled[n_train:]
            if not n_held:
                continue
            if len(ratios) == 3:
                n_val = int(math.floor(n_held * ratios[1] / eval_share))
                if n_val:
                    val_lists[u] = held[:n_val]
                if n_held > n_val:
                    test_lists[u] = held[n_val:]
            else:
                test_lists[u] = held

        parts: Dict[str, _Part] = {}
        for name, lists in (("validation", val_lists), ("test", test_lists)):
            if name == "validation" and len(ratios) == 2:
                continue
            users = sorted(lists)
            parts[name] = (users, [train_lists[u] for u in users], [lists[u] for u in users])

        train_full = InteractionMatrix.from_pairs(
            np.concatenate(train_rows), np.concatenate(train_cols), X.user_ids, X.item_ids
        )
        return train_full, parts

    @staticmethod
    def _assemble(
        X: InteractionMatrix,
        train_full: InteractionMatrix,
        parts: Dict[str, "_Part"],
        protocol: SplitProtocol,
        seed: int,
    ) -> SplitBundle:
        """Compact the item vocabulary to training items and build the evaluation matrices"""
        kept_items = np.flatnonzero(train_full.item_degrees > 0)
        if kept_items.size == 0:
            raise EmptyAfterFilterError("training split has no interactions")
        dropped = X.cols - kept_items.size
        if dropped:
            logger.warning("Dropped %d items that never occur in the training split", dropped)
        train = InteractionService.submatrix(train_full, np.arange(train_full.rows), kept_items)

        remap = np.full(X.cols, -1, dtype=np.int64)
        remap[kept_items] = np.arange(kept_items.size)

        evals: Dict[str, Optional[EvalSplit]] = {"validation": None, "test": None}
        for name, (users, foldin, heldout) in parts.items():
            rows_f, cols_f, rows_h, cols_h = [], [], [], []
            kept_users: List[int] = []
            empty = 0
            for u, f_items, h_items in zip(users, foldin, heldout):
                f_new = remap[np.asarray(f_items, dtype=np.int64)]
                h_new = remap[np.asarray(h_items, dtype=np.int64)]
                f_new = f_new[f_new >= 0]
                h_new = h_new[h_new >= 0]
                if h_new.size == 0:
                    empty += 1
                    continue
                r = len(kept_users)
                kept_users.append(u)
                rows_f.append(np.full(f_new.size, r, dtype=np.int64))
                cols_f.append(f_new)
                rows_h.append(np.full(h_new.size, r, dtype=np.int64))
                cols_h.append(h_new)
            if empty:
                logger.warning(
                    "Excluded %d %s users whose held-out items are all outside the training vocabulary",
                    empty, name
                )
            if not kept_users:
                raise EmptyAfterFilterError(f"{name} split has no evaluable users")
            user_ids = [X.user_ids[u] for u in kept_users]
            evals[name] = EvalSplit(
                foldin=InteractionMatrix.from_pairs(
                    np.concatenate(rows_f), np.concatenate(cols_f), user_ids, train.item_ids),
                heldout=InteractionMatrix.from_pairs(
                    np.concatenate(rows_h), np.concatenate(cols_h), user_ids, train.item_ids),
            )

        return SplitBundle(
            train=train,
            validation=evals["validation"],
            test=evals["test"],
            protocol=protocol,
            seed=seed,
        )

    @staticmethod
    def inject_noise(X: InteractionMatrix, cfg: NoiseConfig) -> InteractionMatrix:
        """
        Replace round(r/100 * nnz) observed entries with as many unobserved cells.

        Args:
            X: Interaction matrix
            cfg: Noise ratio and seed

        Returns:
            Matrix with the same shape, vocabularies and nnz

        Raises:
            InsufficientCellsError: If X has fewer zero cells than entries to move
        """
        count = _round_half_up(cfg.ratio_percent / 100.0 * X.nnz)
        if count == 0:
            return X
        total = X.rows * X.cols
        zero_cells = total - X.nnz
        if count > zero_cells:
            raise InsufficientCellsError(
                f"noise ratio {cfg.ratio_percent}% needs {count} unobserved cells, only {zero_cells} exist"
            )

        rng = np.random.default_rng(cfg.seed)
        rows, cols = X.pairs()
        observed = rows * X.cols + cols  # sorted: CSR is row-major with sorted indices

        removed = rng.choice(X.nnz, size=count, replace=False)
        keep = np.ones(X.nnz, dtype=bool)
        keep[removed] = False

        if total <= ENUMERATE_CELL_LIMIT or X.nnz > total // 2:
            candidates = np.setdiff1d(np.arange(total, dtype=np.int64), observed, assume_unique=True)
            added = candidates[rng.choice(candidates.size, size=count, replace=False)]
        else:
            added = InteractionService._sample_unobserved(observed, total, count, rng)

        new_rows, new_cols = np.divmod(added, X.cols)
        noisy = InteractionMatrix.from_pairs(
            np.concatenate([rows[keep], new_rows]),
            np.concatenate([cols[keep], new_cols]),
            X.user_ids,
            X.item_ids,
        )
        logger.info("Injected %.4g%% noise: moved %d of %d interactions", cfg.ratio_percent, count, X.nnz)
        return noisy

    @staticmethod
    def _sample_unobserved(observed: np.ndarray, total: int, count: int, rng) -> np.ndarray:
        """Rejection-sample `count` distinct flat cell ids outside `observed` (sorted)"""
        chosen = np.empty(0, dtype=np.int64)
        while chosen.size < count:
            need = count - chosen.size
            draw = rng.integers(0, total, size=2 * need + 16, dtype=np.int64)
            _, first = np.unique(draw, return_index=True)
            draw = draw[np.sort(first)]
            draw = draw[~np.isin(draw, observed, assume_unique=True)]
            draw = draw[~np.isin(draw, chosen)]
            chosen = np.concatenate([chosen, draw[:need]])
        return chosen

    @staticmethod
    def dataset_hash(X: InteractionMatrix) -> str:
        """Short content hash of the matrix structure (shape, indptr, indices)"""
        digest = hashlib.sha256()
        digest.update(np.asarray(X.matrix.shape, dtype="<i8").tobytes())
        digest.update(np.asarray(X.matrix.indptr, dtype="<i8").tobytes())
        digest.update(np.asarray(X.matrix.indices, dtype="<i8").tobytes())
        return digest.hexdigest()[:16]

    @staticmethod
    def bundle_hash(bundle: SplitBundle) -> str:
        """Short hash over every matrix of a bundle"""
        digest = hashlib.sha256()
        for name, X in InteractionService._bundle_matrices(bundle).items():
            digest.update(f"{name}:{InteractionService.dataset_hash(X)};".encode())
        return digest.hexdigest()[:16]

    # ---------- Persistence ----------

    @staticmethod
    def sidecar_paths(path: Path) -> Tuple[Path, Path]:
        """(users, items) index-map files next to a matrix file"""
        path = Path(path)
        return path.parent / f"{path.stem}.users.tsv", path.parent / f"{path.stem}.items.tsv"

    @staticmethod
    def write_matrix(X: InteractionMatrix, path: Path) -> None:
        """
        Write `LAREX m n nnz` followed by one `u i` line per entry, plus index-map sidecars.
        """
        path = Path(path)
        rows, cols = X.pairs()
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{MATRIX_MAGIC} {X.rows} {X.cols} {X.nnz}\n")
            pd.DataFrame({"u": rows, "i": cols}).to_csv(
                fh, sep=" ", header=False, index=False, lineterminator="\n"
            )
        users_path, items_path = InteractionService.sidecar_paths(path)
        InteractionService._write_index_map(X.user_ids, users_path)
        InteractionService._write_index_map(X.item_ids, items_path)

    @staticmethod
    def _write_index_map(ids: Sequence[str], path: Path) -> None:
        pd.DataFrame({"id": list(ids), "index": np.arange(len(ids))}).to_csv(
            path, sep="\t", header=False, index=False, lineterminator="\n"
        )

    @staticmethod
    def _read_index_map(path: Path, expected: int) -> List[str]:
        frame = pd.read_csv(
            path, sep="\t", header=None, names=["id", "index"], dtype={"id": str},
            keep_default_na=False, na_values=[],
        )
        if len(frame) != expected or not np.array_equal(frame["index"].to_numpy(), np.arange(expected)):
            raise DataFormatError(f"{path}: index map does not match the matrix ({len(frame)} of {expected})")
        return frame["id"].astype(str).tolist()

    @staticmethod
    def read_matrix(path: Path) -> InteractionMatrix:
        """
        Read a matrix written by `write_matrix`.

        Raises:
            FileNotFoundError: If the matrix or a sidecar is missing
            DataFormatError: Bad header, malformed or out-of-range entries
        """
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Matrix file {path} not found")
        with path.open("r", encoding="utf-8") as fh:
            header = fh.readline().split()
        if len(header) != 4 or header[0] != MATRIX_MAGIC:
            raise DataFormatError(f"{path}: expected header '{MATRIX_MAGIC} m n nnz'", line=1)
        try:
            m, n, nnz = (int(v) for v in header[1:])
        except ValueError as e:
            raise DataFormatError(f"{path}: header counts must be integers", line=1) from e

        if nnz:
            try:
                frame = pd.read_csv(path, sep=" ", skiprows=1, header=None, names=["u", "i"], dtype=np.int64)
            except (ParserError, ValueError) as e:
                raise DataFormatError(f"{path}: malformed entry ({e})") from e
            users, items = frame["u"].to_numpy(), frame["i"].to_numpy()
        else:
            users = items = np.empty(0, dtype=np.int64)
        if len(users) != nnz:
            raise DataFormatError(f"{path}: header announces {nnz} entries, found {len(users)}")
        if nnz and (users.min() < 0 or users.max() >= m or items.min() < 0 or items.max() >= n):
            raise DataFormatError(f"{path}: entry index out of range for {m} x {n}")

        users_path, items_path = InteractionService.sidecar_paths(path)
        user_ids = InteractionService._read_index_map(users_path, m)
        item_ids = InteractionService._read_index_map(items_path, n)
        X = InteractionMatrix.from_pairs(users, items, user_ids, item_ids)
        if X.nnz != nnz:
            raise DataFormatError(f"{path}: duplicate entries")
        return X

    @staticmethod
    def write_bundle(bundle: SplitBundle, out_dir: Path) -> List[Path]:
        """Write every matrix of a bundle plus `bundle.tsv`; returns the matrix paths"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name, X in InteractionService._bundle_matrices(bundle).items():
            target = out_dir / f"{name}.larex"
            InteractionService.write_matrix(X, target)
            written.append(target)
        pd.DataFrame(
            {"key": ["protocol", "seed", "validation"],
             "value": [bundle.protocol.value, str(bundle.seed), str(bundle.validation is not None).lower()]}
        ).to_csv(out_dir / BUNDLE_META, sep="\t", header=False, index=False, lineterminator="\n")
        return written

    @staticmethod
    def _bundle_matrices(bundle: SplitBundle) -> Dict[str, InteractionMatrix]:
        matrices = {"train": bundle.train}
        if bundle.validation is not None:
            matrices["validation.foldin"] = bundle.validation.foldin
            matrices["validation.heldout"] = bundle.validation.heldout
        matrices["test.foldin"] = bundle.test.foldin
        matrices["test.heldout"] = bundle.test.heldout
        return matrices

    @staticmethod
    def read_bundle(data_dir: Path) -> SplitBundle:
        """
        Read a prepared directory written by `write_bundle`.

        Raises:
            FileNotFoundError: If the directory or one of its files is missing
            DataFormatError: If a file is malformed
        """
        data_dir = Path(data_dir)
        meta_path = data_dir / BUNDLE_META
        if not meta_path.is_file():
            raise FileNotFoundError(f"{data_dir} is not a prepared data directory ({BUNDLE_META} missing)")
        meta = pd.read_csv(meta_path, sep="\t", header=None, names=["key", "value"], dtype=str)
        values = dict(zip(meta["key"], meta["value"]))
        try:
            protocol = SplitProtocol(values["protocol"])
            seed = int(values["seed"])
        except (KeyError, ValueError) as e:
            raise DataFormatError(f"{meta_path}: invalid bundle metadata") from e

        def load_split(name: str) -> EvalSplit:
            return EvalSplit(
                foldin=InteractionService.read_matrix(data_dir / f"{name}.foldin.larex"),
                heldout=InteractionService.read_matrix(data_dir / f"{name}.heldout.larex"),
            )

        validation = load_split("validation") if values.get("validation") == "true" else None
        return SplitBundle(
            train=InteractionService.read_matrix(data_dir / "train.larex"),
            validation=validation,
            test=load_split("test"),
            protocol=protocol,
            seed=seed,
        )


_Part = Tuple[List[int], List[np.ndarray], List[np.ndarray]]

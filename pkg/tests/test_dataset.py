import numpy as np
import pytest

from zerorec.dataset import (
    Interaction,
    build_dataset,
    k_core_filter,
    load_dataset,
    load_interactions,
    partition_seen_unseen,
    save_dataset,
    split_per_user,
)
from zerorec.errors import ConfigError, DataError

from conftest import random_bipartite_edges


def kcore_oracle(edges, k):
    """Exhaustive iterative deletion on python sets."""
    edges = {(int(u), int(v)) for u, v in edges}
    while True:
        udeg, ideg = {}, {}
        for u, v in edges:
            udeg[u] = udeg.get(u, 0) + 1
            ideg[v] = ideg.get(v, 0) + 1
        survivors = {(u, v) for u, v in edges if udeg[u] >= k and ideg[v] >= k}
        if survivors == edges:
            return edges
        edges = survivors


def write_rows(tmp_path, rows, name="data.tsv", sep="\t"):
    path = tmp_path / name
    path.write_text("\n".join(sep.join(str(c) for c in row) for row in rows) + "\n")
    return path


class TestLoadInteractions:
    def test_rating_threshold_drops_low_rows(self, tmp_path):
        path = write_rows(tmp_path, [("a", "x", 5), ("b", "y", 2)])
        out = load_interactions(path, rating_threshold=3)
        assert [(i.user_id, i.item_id) for i in out] == [("a", "x")]

    def test_parser_keeps_duplicates(self, tmp_path):
        path = write_rows(tmp_path, [("a", "x"), ("a", "x")])
        assert len(load_interactions(path)) == 2

    def test_empty_file_errors(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("")
        with pytest.raises(DataError):
            load_interactions(path)

    def test_malformed_row_reports_line_number(self, tmp_path):
        path = write_rows(tmp_path, [("a", "x", 4), ("loner",), ("b", "y", 4)])
        with pytest.raises(DataError, match=":2"):
            load_interactions(path)

    def test_bad_rating_reports_line_number(self, tmp_path):
        path = write_rows(tmp_path, [("a", "x", "notanumber")])
        with pytest.raises(DataError, match=":1"):
            load_interactions(path)

    def test_rows_without_rating_are_kept(self, tmp_path):
        path = write_rows(tmp_path, [("a", "x"), ("b", "y", 1)])
        out = load_interactions(path)
        assert len(out) == 1 and out[0].user_id == "a"

    def test_csv_delimiter_inferred(self, tmp_path):
        path = write_rows(tmp_path, [("a", "x", 4, 123)], name="d.csv", sep=",")
        out = load_interactions(path)
        assert out[0].timestamp == 123

    def test_unknown_extension_needs_delimiter(self, tmp_path):
        path = write_rows(tmp_path, [("a", "x")], name="d.unknown")
        with pytest.raises(ConfigError):
            load_interactions(path)
        assert len(load_interactions(path, delimiter="\t")) == 1


class TestKCore:
    def test_star_graph_eliminated(self):
        edges = np.array([[0, v] for v in range(5)])
        with pytest.raises(DataError, match="eliminated"):
            k_core_filter(edges, 5)

    def test_complete_bipartite_unchanged(self):
        edges = np.array([[u, v] for u in range(5) for v in range(5)])
        out = k_core_filter(edges, 5)
        assert len(out) == 25

    def test_chain_prunes_to_fixpoint(self):
        # u0 rides on items 0,1 (plus filler); dropping item 2 (degree 1)
        # pushes u1 below k, whose removal must cascade.
        edges = [(0, 0), (0, 1), (1, 0), (1, 2)]
        edges += [(2, 0), (2, 1), (3, 0), (3, 1)]
        edges = np.array(edges)
        expect = kcore_oracle(edges, 2)
        got = {(int(u), int(v)) for u, v in k_core_filter(edges, 2)}
        assert got == expect
        assert (1, 2) not in got and (1, 0) not in got

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        edges = random_bipartite_edges(rng, 20, 20, 0.2)
        once = k_core_filter(edges, 3)
        twice = k_core_filter(once, 3)
        assert np.array_equal(once, twice)

    def test_matches_oracle_on_random_graphs(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            edges = random_bipartite_edges(rng, 15, 15, 0.25)
            k = int(rng.integers(1, 5))
            expect = kcore_oracle(edges, k)
            if not expect:
                with pytest.raises(DataError):
                    k_core_filter(edges, k)
            else:
                got = {(int(u), int(v)) for u, v in k_core_filter(edges, k)}
                assert got == expect


class TestBuildDataset:
    def test_duplicates_collapse_and_ids_dense(self):
        rows = [Interaction("a", "x"), Interaction("a", "x"), Interaction("b", "x"),
                Interaction("a", "y"), Interaction("b", "y")]
        ds = build_dataset(rows, k=2)
        assert ds.n_edges == 4
        assert ds.users == ["a", "b"] and ds.items == ["x", "y"]

    def test_first_seen_order_preserved_after_filter(self):
        rows = [Interaction("z", "q")]  # both will be pruned at k=2
        rows += [Interaction(u, v) for u in ("b", "a") for v in ("y", "x")]
        ds = build_dataset(rows, k=2)
        assert ds.users == ["b", "a"] and ds.items == ["y", "x"]


class TestPartition:
    def make(self, n=8):
        rows = [Interaction(f"u{i}", f"i{j}") for i in range(n) for j in range(n)]
        return build_dataset(rows, k=2)

    def test_complete_graph_splits_exactly(self):
        ds = self.make(4)
        seen, unseen = partition_seen_unseen(ds, 0.5, rng_seed=0, k=2)
        assert seen.n_users == 2 and seen.n_items == 2 and seen.n_edges == 4
        assert unseen.n_users == 2 and unseen.n_items == 2 and unseen.n_edges == 4

    def test_deterministic(self):
        ds = self.make()
        a1, b1 = partition_seen_unseen(ds, 0.5, rng_seed=9, k=2)
        a2, b2 = partition_seen_unseen(ds, 0.5, rng_seed=9, k=2)
        assert a1.users == a2.users and b1.items == b2.items
        assert np.array_equal(a1.edges, a2.edges)

    def test_seen_fraction_floor(self):
        ds = self.make(10)
        seen, _ = partition_seen_unseen(ds, 0.3, rng_seed=1, k=1)
        assert seen.n_users == 3  # floor(0.3 * 10)

    def test_disjoint_node_sets(self):
        ds = self.make()
        seen, unseen = partition_seen_unseen(ds, 0.5, rng_seed=3, k=2)
        assert not set(seen.users) & set(unseen.users)
        assert not set(seen.items) & set(unseen.items)

    def test_partition_labels(self):
        ds = self.make()
        seen, unseen = partition_seen_unseen(ds, 0.5, rng_seed=3, k=2)
        assert seen.partition == "seen" and unseen.partition == "unseen"


def split_counts_oracle(n, train_fraction=0.7, valid_fraction=0.1):
    """The declared rounding rule, enumerated directly."""
    n_train = int(np.floor(train_fraction * n + 0.5))
    n_train = min(max(1, n_train), n - 1)
    n_valid = int(np.floor(valid_fraction * n_train))
    return n_train - n_valid, n_valid, n - n_train


class TestSplitPerUser:
    def make(self, degree=10, n_users=6):
        rows = [Interaction(f"u{i}", f"i{j}") for i in range(n_users) for j in range(degree)]
        return build_dataset(rows, k=1)

    def test_rounding_rule_on_ten_edges(self):
        expect = split_counts_oracle(10)
        ds = split_per_user(self.make(10), 0.7, 0.1, rng_seed=0)
        for u in range(ds.n_users):
            counts = tuple(
                len(ds.edge_indices_for_user(u, s)) for s in ("train", "valid", "test")
            )
            assert counts == expect
        # at least 6 pure-train edges and exactly 3 test edges per the rule
        assert expect[0] >= 6 and expect[2] == 3

    @pytest.mark.parametrize("train_fraction", [0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    def test_fraction_sweep_counts(self, train_fraction):
        ds = split_per_user(self.make(10), train_fraction, 0.1, rng_seed=0)
        expect = split_counts_oracle(10, train_fraction)
        counts = tuple(len(ds.edge_indices_for_user(0, s)) for s in ("train", "valid", "test"))
        assert counts == expect

    def test_deterministic(self):
        a = split_per_user(self.make(), 0.7, 0.1, rng_seed=5)
        b = split_per_user(self.make(), 0.7, 0.1, rng_seed=5)
        assert np.array_equal(a.split_tags, b.split_tags)

    def test_counts_sum_to_degree(self):
        rng = np.random.default_rng(2)
        rows = []
        for i in range(10):
            deg = int(rng.integers(2, 15))
            for j in rng.choice(40, size=deg, replace=False):
                rows.append(Interaction(f"u{i}", f"i{j}"))
        ds = split_per_user(build_dataset(rows, k=1), 0.7, 0.1, rng_seed=0)
        for u in range(ds.n_users):
            total = sum(len(ds.edge_indices_for_user(u, s)) for s in ("train", "valid", "test"))
            assert total == len(ds.edge_indices_for_user(u))
            assert len(ds.edge_indices_for_user(u, "train")) >= 1
            assert len(ds.edge_indices_for_user(u, "test")) >= 1

    def test_user_with_one_edge_errors(self):
        rows = [Interaction("a", "x"), Interaction("b", "x"), Interaction("b", "y")]
        ds = build_dataset(rows, k=1)
        with pytest.raises(DataError, match="need >= 2"):
            split_per_user(ds, 0.7, 0.1, rng_seed=0)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        rows = [Interaction(f"u{u}", f"i{v}") for u, v in random_bipartite_edges(rng, 10, 10, 0.5)]
        ds = split_per_user(build_dataset(rows, k=2), 0.7, 0.1, rng_seed=1)
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.users == ds.users and back.items == ds.items
        assert np.array_equal(back.edges, ds.edges)
        assert np.array_equal(back.split_tags, ds.split_tags)

    def test_expected_files(self, tmp_path):
        rows = [Interaction(f"u{u}", f"i{v}") for u in range(3) for v in range(3)]
        ds = split_per_user(build_dataset(rows, k=1), 0.7, 0.1, rng_seed=1)
        save_dataset(ds, tmp_path / "d")
        for name in ("edges.bin", "users.tsv", "items.tsv", "splits.bin", "meta.json"):
            assert (tmp_path / "d" / name).exists()

    def test_load_missing_dir_errors(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path / "nope")

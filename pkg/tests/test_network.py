"""Routing laws, transcripts, views, and the geometric mixing property."""

import numpy as np
import pytest

from walkforget import (
    Graph,
    Message,
    Transcript,
    extract_view,
    first_observation_param,
    route_restart,
    route_uniform,
    substream,
)

# chi-square critical value at the 0.001 level with 20 degrees of freedom
CHI2_999_DOF20 = 45.3147


class TestRouteUniform:
    def test_two_clients_deterministic(self):
        g = Graph.complete(2)
        rng = substream(0, "t")
        assert all(route_uniform(1, g, rng) == 2 for _ in range(10))

    def test_support(self):
        g = Graph.complete(3)
        rng = substream(1, "t")
        for _ in range(50):
            assert route_uniform(2, g, rng) in (1, 3)

    def test_uniform_frequencies(self):
        g = Graph.complete(10)
        rng = substream(2, "freq")
        draws = np.array([route_uniform(1, g, rng) for _ in range(10**6)])
        for c in range(2, 11):
            assert abs(np.mean(draws == c) - 1 / 9) < 0.002
        assert not np.any(draws == 1)


class TestRouteRestart:
    def test_p_one_always_target(self):
        g = Graph.complete(5)
        rng = substream(3, "t")
        assert all(route_restart(4, 1.0, g, rng) == 4 for _ in range(20))

    def test_p_zero_never_target(self):
        g = Graph.complete(10)
        rng = substream(4, "t")
        draws = np.array([route_restart(1, 0.0, g, rng) for _ in range(10**6)])
        assert not np.any(draws == 1)
        for c in range(2, 11):
            assert abs(np.mean(draws == c) - 1 / 9) < 0.002

    def test_intermediate_p(self):
        g = Graph.complete(10)
        rng = substream(5, "t")
        draws = np.array([route_restart(1, 0.1, g, rng) for _ in range(10**6)])
        assert abs(np.mean(draws == 1) - 0.1) < 0.002
        # here (1 - p)/(N - 1) = 0.1 as well
        for c in range(2, 11):
            assert abs(np.mean(draws == c) - 0.1) < 0.002


class TestFirstObservationParam:
    def test_values(self):
        assert first_observation_param(0.1, 10) == pytest.approx(0.1)
        assert first_observation_param(0.0, 2) == pytest.approx(1.0)
        assert first_observation_param(0.5, 11) == pytest.approx(0.05)

    def test_p_one_is_an_error(self):
        with pytest.raises(ValueError):
            first_observation_param(1.0, 10)


class TestGeometricMixing:
    def test_delay_distribution(self):
        # first time the restart walk lands on a fixed observer != target
        p, n = 0.1, 10
        q = first_observation_param(p, n)
        g = Graph.complete(n)
        rng = substream(6, "mixing")
        observer = 7
        delays = np.empty(10**5, dtype=np.int64)
        for i in range(delays.shape[0]):
            k = 1
            while route_restart(1, p, g, rng) != observer:
                k += 1
            delays[i] = k
        assert abs(delays.mean() - 1 / q) / (1 / q) < 0.02
        # chi-square goodness of fit on the first 20 support points + tail
        n_total = delays.shape[0]
        observed = [np.sum(delays == k) for k in range(1, 21)]
        expected = [n_total * q * (1 - q) ** (k - 1) for k in range(1, 21)]
        observed.append(n_total - sum(observed))
        expected.append(n_total - sum(expected))
        chi2 = sum((o - e) ** 2 / e for o, e in zip(observed, expected))
        assert chi2 < CHI2_999_DOF20


def _walk_transcript(n_clients=6, hops=1000, seed=11):
    g = Graph.complete(n_clients)
    rng = substream(seed, "walk")
    prev = 1
    msgs = []
    for t in range(1, hops + 1):
        cur = route_uniform(prev, g, rng)
        msgs.append(Message(t, prev, cur, cur == 2, f"{t:04x}"))
        prev = cur
    return Transcript(tuple(msgs))


class TestViews:
    def test_empty_view(self):
        tr = Transcript((Message(1, 1, 2, False, "aa"),))
        assert len(extract_view(tr, 3)) == 0

    def test_single_message(self):
        tr = Transcript((Message(1, 1, 2, False, "aa"),))
        view = extract_view(tr, 2)
        assert len(view) == 1 and view.messages[0].receiver == 2

    def test_brute_force_recount(self):
        tr = _walk_transcript()
        for observer in (1, 3, 6):
            view = extract_view(tr, observer)
            manual = sum(
                1 for m in tr.messages if m.sender == observer or m.receiver == observer
            )
            assert len(view) == manual

    def test_union_covers_transcript_twice(self):
        tr = _walk_transcript()
        total = sum(len(extract_view(tr, c)) for c in range(1, 7))
        # every edge-walk message has two distinct endpoints
        assert total == 2 * len(tr)

    def test_idempotent(self):
        tr = _walk_transcript()
        view = extract_view(tr, 4)
        again = extract_view(view, 4)
        assert again.messages == view.messages


class TestTranscriptExport:
    def test_line_round_trip(self):
        tr = _walk_transcript(hops=25)
        again = Transcript.from_lines(tr.to_lines())
        assert again == tr

    def test_rounds_strictly_increasing(self):
        with pytest.raises(ValueError):
            Transcript((Message(2, 1, 2, False, "aa"), Message(1, 2, 3, False, "bb")))

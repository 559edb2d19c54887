from dataclasses import dataclass, field
import threading
from typing import Tuple

import pytest

from mirrorfield.configbase import JsonConfig
from mirrorfield.pool import THREADS_ENV_VAR, WorkerPool, defaultPoolSize


@pytest.mark.parametrize("poolSize", [1, 4])
def test_resultsKeepTheItemOrder(poolSize):
    with WorkerPool(poolSize) as pool:
        assert pool.map(lambda x: x * x, range(20)) == [x * x for x in range(20)]


def test_workersRunOffTheCallingThread():
    with WorkerPool(3) as pool:
        names = pool.map(lambda _: threading.current_thread().name, range(6))
    assert threading.current_thread().name not in names


def test_sizeOneRunsInline():
    with WorkerPool(1) as pool:
        names = pool.map(lambda _: threading.current_thread().name, range(3))
    assert set(names) == {threading.current_thread().name}


def test_firstFailingItemIsRaised():
    def fail(x):
        if x in (2, 5):
            raise KeyError(x)
        return x

    with WorkerPool(2) as pool:
        with pytest.raises(KeyError) as info:
            pool.map(fail, range(8))
        assert info.value.args == (2,)
        # The pool survives a failed map
        assert pool.map(str, [1]) == ["1"]


def test_closedPoolRaises():
    pool = WorkerPool(2)
    pool.close()
    with pytest.raises(RuntimeError):
        pool.map(str, [1])


def test_poolSizeFromTheEnvironment(monkeypatch):
    monkeypatch.setenv(THREADS_ENV_VAR, "3")
    assert defaultPoolSize() == 3
    monkeypatch.setenv(THREADS_ENV_VAR, " ")
    assert defaultPoolSize() >= 1


@pytest.mark.parametrize("value", ["0", "two", "-1"])
def test_invalidPoolSizesRaise(monkeypatch, value):
    monkeypatch.setenv(THREADS_ENV_VAR, value)
    with pytest.raises(ValueError):
        defaultPoolSize()


def test_explicitPoolSizeMustBePositive():
    with pytest.raises(ValueError):
        WorkerPool(0)


@dataclass
class Inner(JsonConfig):
    size: int = 1
    weights: Tuple[float, ...] = (1.0, 2.0)


@dataclass
class Outer(JsonConfig):
    name: str = "a"
    inner: Inner = field(default_factory=Inner)


class TestJsonConfig:
    def test_missingKeysKeepTheirDefaults(self):
        config = Outer.fromJson({"inner": {"size": 3}})
        assert config == Outer("a", Inner(3, (1.0, 2.0)))

    def test_listsBecomeTuples(self):
        assert Outer.fromJson({"inner": {"weights": [0.5]}}).inner.weights == (0.5,)

    def test_unknownKeysRaise(self):
        with pytest.raises(ValueError):
            Outer.fromJson({"inner": {"sise": 3}})
        with pytest.raises(ValueError):
            Outer.fromJson(["not", "a", "mapping"])

    def test_hashFollowsTheValues(self):
        assert Outer().hash() == Outer.fromJson(Outer().toJson()).hash()
        assert Outer().hash() != Outer(inner=Inner(size=2)).hash()

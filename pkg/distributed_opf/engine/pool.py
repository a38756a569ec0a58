"""批量同步的工作线程池

map 按输入顺序返回结果，结果的写回由调用方在主线程完成，
因此线程数不影响计算结果。
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


class WorkerPool:
    """threads == 1 时不创建线程，直接在当前线程中顺序执行

    + `map` : 对每个输入调用函数，返回有序结果列表
    + `close` : 关闭线程池
    """

    threads: int
    _executor: ThreadPoolExecutor | None

    def __init__(self, threads: int = 1) -> None:
        if threads < 1:
            raise ValueError("threads must be >= 1")
        self.threads = threads
        if threads > 1:
            self._executor = ThreadPoolExecutor(threads, thread_name_prefix="dopf-worker")
            logging.debug(f"started worker pool with {threads} threads")
        else:
            self._executor = None

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        if self._executor is None:
            return [fn(i) for i in items]
        # 任一任务的异常在取结果时原样抛出
        return list(self._executor.map(fn, items))

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc):
        self.close()

"""Plain callables used as patch targets in tests."""


def optimizer_step():
    return "stepped"


def helper():
    return "helped"


def explodes():
    raise ValueError("boom")


def _private():
    return "hidden"


class Trainer:
    def fit(self):
        return helper()

    def _internal(self):
        return None

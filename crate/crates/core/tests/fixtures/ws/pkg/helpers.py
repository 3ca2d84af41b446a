"""Helpers."""


def normalize(value):
    """Normalize a value."""
    return value.strip().lower()


class Greeter:
    def greet(self, name):
        return "hello " + normalize(name)

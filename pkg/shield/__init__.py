from shield import config  # noqa: F401

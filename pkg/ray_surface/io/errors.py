class FormatError(ValueError):
    """Malformed input file; names the file and the offending field."""

    def __init__(self, path, field: str, message: str):
        super().__init__(f"{path}: {field}: {message}")
        self.path = str(path)
        self.field = field

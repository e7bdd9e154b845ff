"""Error types shared across the toolkit."""


class ValidationError(ValueError):
    """An input file or argument failed validation.

    `locus` pinpoints the offending record, e.g. "annotations[3]" or
    "dets.jsonl:17", and is included in the rendered message.
    """

    def __init__(self, message: str, locus: str | None = None):
        self.locus = locus
        super().__init__(f"{locus}: {message}" if locus else message)

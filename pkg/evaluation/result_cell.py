class ResultCell:
    def __init__(self, mean=0, std=0, min=0, support=None, connector='±', show_min=False, empty=False,
                 num_decimals=2):
        self.mean = mean
        self.std = std
        self.min = min
        self.support = support  # how many seeds we had
        self.connector = connector
        self.show_min = show_min
        self.empty = empty  # we got no result
        self.num_decimals = num_decimals

    def round(self, num):
        return round(float(num), self.num_decimals)

    def to_dict(self):
        return {"mean": float(self.mean), "std": float(self.std), "min": float(self.min), "support": self.support}

    def __str__(self):
        if self.empty:
            return "–"
        mean_std = f"{self.round(self.mean)} {self.connector} {self.round(self.std)}"
        return mean_std + (f" ({self.round(self.min)})" if self.show_min else "")

    def to_latex(self):
        if self.empty:
            return "–"
        mean_std = f"{self.round(self.mean)} {{\\small {self.connector} {self.round(self.std)}}}"
        return mean_std + (f" ({self.round(self.min)})" if self.show_min else "")

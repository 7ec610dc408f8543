import pytest

from layoutmorph.core import CategoryPalette


@pytest.fixture
def palette() -> CategoryPalette:
    return CategoryPalette.from_pairs(
        [
            ("person", (220, 20, 60)),
            ("dog", (119, 11, 32)),
            ("cat", (0, 0, 142)),
            ("car", (0, 60, 100)),
            ("tree", (107, 142, 35)),
            ("chair", (190, 153, 153)),
        ]
    )


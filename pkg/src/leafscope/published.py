"""Published confusion matrices for the five fine-tuned backbones.

Stored exactly as printed: rows are PREDICTED classes and columns are TRUE
classes. Only that reading reproduces the published per-class precision and
recall, so importers must transpose (see ``metrics.from_published_figure``).
Class order is AC, BC, CW, DB, GM, HL, PM, SM.
"""

FIGURE_CLASSES = ("AC", "BC", "CW", "DB", "GM", "HL", "PM", "SM")

FIGURE_MATRICES = {
    "densenet201": (
        (1621,    3,    0,    1,    2,    1,    0,    0),
        (   4, 1634,    0,    0,    6,    0,    4,    4),
        (   0,    0, 1647,    0,    0,    0,    0,    0),
        (   4,    0,    0, 1645,    7,    0,    0,    0),
        (   2,   11,    0,    0, 1625,    0,    0,    4),
        (  14,    0,    0,    0,    1, 1647,    0,    4),
        (   0,    0,    0,    0,    1,    0, 1638,   21),
        (   2,    1,    0,    2,    8,    1,    7, 1615),
    ),
    "inceptionv3": (
        (1592,    5,    0,    8,   13,    1,    0,    3),
        (   7, 1619,    0,    0,   11,    0,    1,    7),
        (   1,    0, 1647,    0,    0,    0,    0,    1),
        (  11,    2,    0, 1634,   12,    3,    7,    4),
        (  29,   15,    0,    0, 1592,    1,    0,   12),
        (   6,    0,    0,    1,    8, 1630,    3,   17),
        (   2,    0,    0,    7,    4,    1, 1566,   74),
        (   1,    5,    0,    0,    9,   11,   70, 1531),
    ),
    "resnet152v2": (
        (1621,    9,    0,    2,    6,    1,    0,    1),
        (   1, 1630,    0,    0,    4,    0,    8,    0),
        (   0,    0, 1649,    1,    0,    0,    0,    0),
        (   2,    1,    0, 1642,   10,    0,    1,    0),
        (  14,    5,    0,    2, 1614,    4,    0,   17),
        (   7,    0,    0,    0,    0, 1642,    0,    8),
        (   0,    0,    0,    1,    3,    0, 1606,   41),
        (   1,    4,    0,    0,   12,    2,   31, 1581),
    ),
    "seresnet152": (
        (1623,    7,    0,    2,    2,    0,    0,    0),
        (   1, 1637,    0,    0,    0,    0,    0,    0),
        (   0,    0, 1650,    1,    0,    0,    0,    0),
        (   4,    1,    0, 1643,   12,    0,    0,    1),
        (   3,    2,    0,    1, 1621,    9,    0,    3),
        (  13,    0,    0,    0,    8, 1636,    0,    1),
        (   1,    0,    0,    1,    0,    0, 1636,   20),
        (   1,    0,    0,    0,    5,    2,   12, 1625),
    ),
    "xception": (
        (1615,   10,    0,    1,   11,    1,    0,    2),
        (   8, 1603,    0,    2,    7,    0,    0,    5),
        (   0,    0, 1648,    0,    0,    0,    0,    0),
        (   4,    4,    0, 1635,   14,    2,    4,    1),
        (   9,   16,    0,    0, 1590,    8,    4,    1),
        (  10,    0,    0,    1,    4, 1634,    0,    4),
        (   0,    0,    0,    7,    2,    0, 1570,   46),
        (   1,   16,    0,    2,   19,    3,   70, 1590),
    ),
}

# headline accuracies as reported, in percent
REPORTED_ACCURACY = {
    "densenet201": 99.33,
    "inceptionv3": 98.66,
    "resnet152v2": 99.16,
    "seresnet152": 99.16,
    "xception": 98.42,
}

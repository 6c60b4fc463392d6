"""
Categorical vocabulary shared by prompts, the corpus renderer and the
factor classifier. Names are unique across groups so a bare attribute name
identifies its group.
"""

MOTIONS = (
    'walk',
    'translate-right',
    'translate-left',
    'translate-up',
    'translate-down',
    'diagonal',
    'bounce',
    'orbit',
)

SHAPES = (
    'square',
    'circle',
    'triangle',
    'cross',
    'diamond',
    'ring',
    'hbar',
    'vbar',
)

# subject intensity per band; all above the 0.5 foreground threshold
INTENSITIES = {
    'dim': 0.6,
    'medium': 0.7,
    'bright': 0.8,
    'vivid': 0.9,
}

TEXTURES = (
    'flat',
    'stripes',
    'checker',
    'dots',
)

# background base level per band; level + texture amplitude stays <= 0.4
BACKGROUND_LEVELS = {
    'black': 0.05,
    'dark': 0.14,
    'dusk': 0.23,
    'grey': 0.32,
}

TEXTURE_AMPLITUDE = 0.06

# (group name, names) in embedding order
APPEARANCE_GROUPS = (
    ('shape', SHAPES),
    ('intensity', tuple(INTENSITIES)),
)
BACKGROUND_GROUPS = (
    ('texture', TEXTURES),
    ('level', tuple(BACKGROUND_LEVELS)),
)


def group_of(name, groups):
    """
    Return (group name, index within group) for an attribute name, or None
    """
    for group, names in groups:
        if name in names:
            return group, names.index(name)
    return None

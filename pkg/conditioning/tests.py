import torch
from django.test import SimpleTestCase

from vmc_desk.errors import ConfigError, UnknownCategoryError

from .prompts import (
    APPEARANCE_BLOCK, BACKGROUND_BLOCK, EMBEDDING_DIM, MOTION_BLOCK,
    StructuredPrompt, appearance_invariant, encode_prompt, encode_prompts,
    is_appearance_invariant,
)


class EncodePromptTests(SimpleTestCase):

    def test_embedding_dimension(self):
        self.assertEqual(EMBEDDING_DIM, 28)

    def test_empty_attributes_encode_as_zero_blocks(self):
        c = encode_prompt(StructuredPrompt('bounce')).embedding
        self.assertEqual(float(c[APPEARANCE_BLOCK].abs().sum()), 0.0)
        self.assertEqual(float(c[BACKGROUND_BLOCK].abs().sum()), 0.0)
        self.assertEqual(float(c[MOTION_BLOCK].sum()), 1.0)

    def test_encoding_is_deterministic(self):
        p = StructuredPrompt('walk', ('circle', 'bright'), ('stripes',))
        self.assertTrue(torch.equal(encode_prompt(p).embedding, encode_prompt(p).embedding))

    def test_background_change_only_touches_background_block(self):
        a = encode_prompt(StructuredPrompt('walk', ('circle', 'bright'), ('stripes', 'dark'))).embedding
        b = encode_prompt(StructuredPrompt('walk', ('circle', 'bright'), ('checker', 'grey'))).embedding
        changed = (a != b).nonzero().flatten().tolist()
        self.assertTrue(changed)
        self.assertTrue(all(BACKGROUND_BLOCK.start <= i < BACKGROUND_BLOCK.stop for i in changed))

    def test_unknown_categories(self):
        with self.assertRaises(UnknownCategoryError):
            encode_prompt(StructuredPrompt('moonwalk'))
        with self.assertRaises(UnknownCategoryError):
            encode_prompt(StructuredPrompt('walk', ('duck',)))
        with self.assertRaises(UnknownCategoryError):
            # a texture is not an appearance attribute
            encode_prompt(StructuredPrompt('walk', ('stripes',)))

    def test_batch_encoding(self):
        prompts = [StructuredPrompt('walk'), StructuredPrompt('orbit', ('ring',))]
        batch = encode_prompts(prompts)
        self.assertEqual(tuple(batch.shape), (2, EMBEDDING_DIM))
        self.assertEqual(batch.dtype, torch.float32)


class AppearanceInvariantTests(SimpleTestCase):

    def test_strips_appearance_and_background(self):
        p = StructuredPrompt('walk', ('circle', 'bright'), ('stripes',))
        self.assertEqual(appearance_invariant(p), StructuredPrompt('walk'))

    def test_invariant_prompt_is_unchanged(self):
        p = StructuredPrompt('bounce')
        self.assertEqual(appearance_invariant(p), p)

    def test_idempotent(self):
        p = StructuredPrompt('orbit', ('ring', 'dim'), ('dots', 'dusk'))
        once = appearance_invariant(p)
        self.assertEqual(appearance_invariant(once), once)
        self.assertTrue(is_appearance_invariant(once))
        self.assertEqual(once.motion, p.motion)

    def test_invariant_encoding_has_zero_blocks(self):
        p = StructuredPrompt('diagonal', ('cross', 'vivid'), ('checker', 'black'))
        c = encode_prompt(appearance_invariant(p)).embedding
        self.assertEqual(float(c[APPEARANCE_BLOCK].abs().sum()), 0.0)
        self.assertEqual(float(c[BACKGROUND_BLOCK].abs().sum()), 0.0)


class PromptSerialisationTests(SimpleTestCase):

    def test_json_round_trip(self):
        p = StructuredPrompt('walk', ('circle', 'bright'), ('stripes',))
        self.assertEqual(StructuredPrompt.from_json(p.to_json()), p)

    def test_missing_motion_rejected(self):
        with self.assertRaises(ConfigError):
            StructuredPrompt.from_json('{"appearance": ["circle"]}')

    def test_attribute_lookup(self):
        p = StructuredPrompt('walk', ('circle', 'bright'), ('stripes', 'dark'))
        self.assertEqual(p.attribute('shape'), 'circle')
        self.assertEqual(p.attribute('level'), 'dark')
        self.assertIsNone(StructuredPrompt('walk').attribute('shape'))

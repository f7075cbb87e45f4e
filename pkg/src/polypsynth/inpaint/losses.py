import torch.nn.functional as F


def discriminator_loss(real_logits, fake_logits):
    """Non-saturating GAN loss for the discriminator."""
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def generator_adversarial_loss(fake_logits):
    return F.softplus(-fake_logits).mean()


def feature_matching_loss(fake_feats, real_feats):
    return sum(F.l1_loss(f, r.detach()) for f, r in zip(fake_feats, real_feats)) / max(len(fake_feats), 1)


def hole_l1_loss(output, target, mask):
    """Full-image L1 rescaled by the hole fraction so small holes still dominate."""
    return (output - target).abs().mean() / mask.mean().clamp_min(1e-8)


def masked_l1(output, target, mask):
    """Mean absolute error over hole pixels only (per channel)."""
    m = mask.expand_as(output)
    return ((output - target).abs() * m).sum() / m.sum().clamp_min(1.0)


def gram(feat):
    b, c, h, w = feat.shape
    f = feat.reshape(b, c, h * w)
    return f @ f.transpose(1, 2) / (c * h * w)


def perceptual_loss(out_feats, target_feats):
    return sum(F.l1_loss(o, t.detach()) for o, t in zip(out_feats, target_feats))


def style_loss(out_feats, target_feats):
    return sum(F.l1_loss(gram(o), gram(t.detach())) for o, t in zip(out_feats, target_feats))

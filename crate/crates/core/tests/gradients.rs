mod support;

use ldguid_core::backbones::BackboneKind;
use support::gradcheck::*;

#[test]
fn de_loss_gradient() {
    for (beta, err) in de_loss_errors() {
        assert!(err < TOL, "β={beta}: {err:e}");
    }
}

#[test]
fn total_loss_gradient_through_unet() {
    let err = total_loss_error(BackboneKind::Unet);
    assert!(err < TOL, "{err:e}");
}

#[test]
fn total_loss_gradient_through_bit() {
    let err = total_loss_error(BackboneKind::Bit);
    assert!(err < TOL, "{err:e}");
}

#[test]
fn segmentation_loss_gradient_and_value() {
    let (err, gap) = segmentation_loss_error();
    assert!(err < TOL, "{err:e}");
    assert!(gap < 1e-5, "{gap:e}");
}

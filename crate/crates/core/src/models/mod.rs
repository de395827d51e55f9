//! Network builders and parameter management.

pub mod checkpoint;
mod layers;
mod unet;

pub use layers::ParamSet;
pub use unet::{
    build_autoencoder, build_diffusion_net, build_unet, AutoencoderNet, DiffusionNet, ReconNet,
    UNetConfig,
};

use candle_core::Tensor;

use crate::error::Result;
use crate::image::Image;

/// Stacks images into a `(B, C, H, W)` f32 tensor.
pub fn tensor_of_images(images: &[&Image]) -> Result<Tensor> {
    let data = crate::image::batch_to_vec(images)?;
    let (c, h, w) = images[0].shape();
    Ok(Tensor::from_vec(data, (images.len(), c, h, w), &layers::DEVICE)?)
}

pub fn tensor_of_image(image: &Image) -> Result<Tensor> {
    tensor_of_images(&[image])
}

/// Splits a `(B, C, H, W)` tensor back into images.
pub fn images_from_tensor(t: &Tensor) -> Result<Vec<Image>> {
    let (b, c, h, w) = t.dims4()?;
    let flat: Vec<f32> = t.contiguous()?.flatten_all()?.to_vec1()?;
    let per = c * h * w;
    (0..b)
        .map(|i| Image::new(c, h, w, flat[i * per..(i + 1) * per].to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;
    use candle_core::{Device, Tensor};

    fn random_input(rng: &mut Prng, b: usize, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(rng.normal_vec_f32(b * c * h * w), (b, c, h, w), &Device::Cpu).unwrap()
    }

    #[test]
    fn unet_shape_and_latent_arithmetic() {
        let cfg = UNetConfig::new(1, 1, 4, 8);
        let net = build_unet(cfg.clone(), 3).unwrap();
        let mut rng = Prng::from_seed(0);
        let x = random_input(&mut rng, 2, 1, 64, 64);
        let (y, latent) = net.forward_with_latent(&x, false).unwrap();
        assert_eq!(y.dims4().unwrap(), (2, 1, 64, 64));
        // depth 4, base 8: deepest activation has 8*2^3 = 64 channels at 4x4.
        assert_eq!(latent.dims2().unwrap(), (2, cfg.latent_len(64, 64)));
        assert_eq!(cfg.latent_len(64, 64), 64 * 4 * 4);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = UNetConfig::new(1, 1, 2, 4);
        let a = build_unet(cfg.clone(), 42).unwrap();
        let b = build_unet(cfg, 42).unwrap();
        for ((na, ta), (nb, tb)) in a
            .params()
            .named_tensors()
            .iter()
            .zip(b.params().named_tensors().iter())
        {
            assert_eq!(na, nb);
            let va: Vec<f32> = ta.flatten_all().unwrap().to_vec1().unwrap();
            let vb: Vec<f32> = tb.flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(va, vb, "parameter {na} differs");
        }
        assert_eq!(
            a.params().content_hash().unwrap(),
            b.params().content_hash().unwrap()
        );
    }

    #[test]
    fn zeros_input_gives_finite_output() {
        let cfg = UNetConfig::new(1, 1, 3, 4);
        let net = build_unet(cfg, 1).unwrap();
        let x = Tensor::zeros((1, 1, 32, 32), candle_core::DType::F32, &Device::Cpu).unwrap();
        let y = net.forward(&x, false).unwrap();
        let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|t| t.is_finite()));
    }

    #[test]
    fn indivisible_spatial_size_is_a_config_error() {
        let net = build_unet(UNetConfig::new(1, 1, 4, 4), 1).unwrap();
        let x = Tensor::zeros((1, 1, 48, 40), candle_core::DType::F32, &Device::Cpu).unwrap();
        // 40 is not divisible by 16.
        assert!(net.forward(&x, false).is_err());
    }

    #[test]
    fn autoencoder_has_fewer_parameters_than_unet() {
        let cfg = UNetConfig::new(1, 1, 3, 8);
        let unet = build_unet(cfg.clone(), 0).unwrap();
        let ae = build_autoencoder(cfg.clone(), 0).unwrap();
        assert!(
            ae.params().param_count() < unet.params().param_count(),
            "ae {} vs unet {}",
            ae.params().param_count(),
            unet.params().param_count()
        );

        // Output shape contract at two sizes.
        let mut rng = Prng::from_seed(9);
        for hw in [32usize, 64] {
            let x = random_input(&mut rng, 1, 1, hw, hw);
            let y = ae.forward(&x, false).unwrap();
            assert_eq!(y.dims4().unwrap(), (1, 1, hw, hw));
        }
    }

    #[test]
    fn diffusion_net_time_conditioning_is_live() {
        let cfg = UNetConfig::new(1, 1, 2, 4).with_attention(true);
        let net = build_diffusion_net(cfg, 50, 7).unwrap();
        let mut rng = Prng::from_seed(2);
        let x = random_input(&mut rng, 1, 1, 16, 16);
        let y0: Vec<f32> = net
            .predict(&x, 0, false)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let y40: Vec<f32> = net
            .predict(&x, 40, false)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert_ne!(y0, y40, "two step indices must give different outputs");

        // Deterministic per (seed, input, t).
        let again: Vec<f32> = net
            .predict(&x, 0, false)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert_eq!(y0, again);

        // Step index out of range.
        assert!(net.predict(&x, 50, false).is_err());
    }

    #[test]
    fn every_trainable_parameter_gets_gradient() {
        // MSE on random data must reach every trainable tensor: no dead
        // branches in any of the three builders.
        let cfg = UNetConfig::new(1, 1, 2, 4);
        let mut rng = Prng::from_seed(5);
        let x = random_input(&mut rng, 2, 1, 16, 16);
        let target = random_input(&mut rng, 2, 1, 16, 16);

        let check = |out: Tensor, params: &ParamSet, label: &str| {
            let loss = out.sub(&target).unwrap().sqr().unwrap().mean_all().unwrap();
            let grads = loss.backward().unwrap();
            for (name, var) in params.named_trainable_vars() {
                let g = grads
                    .get(&var)
                    .unwrap_or_else(|| panic!("{label}: missing gradient for {name}"));
                let norm: f32 = g
                    .sqr()
                    .unwrap()
                    .sum_all()
                    .unwrap()
                    .to_scalar()
                    .unwrap();
                assert!(norm > 0.0, "{label}: zero gradient on {name}");
            }
        };

        let unet = build_unet(cfg.clone(), 11).unwrap();
        check(unet.forward(&x, true).unwrap(), unet.params(), "unet");

        let ae = build_autoencoder(cfg.clone(), 11).unwrap();
        check(ae.forward(&x, true).unwrap(), ae.params(), "autoencoder");

        let diff = build_diffusion_net(cfg.with_attention(true), 10, 11).unwrap();
        check(diff.predict(&x, 3, true).unwrap(), diff.params(), "diffusion");
    }

    #[test]
    fn forward_with_latent_matches_plain_forward() {
        let net = build_unet(UNetConfig::new(1, 1, 2, 4), 21).unwrap();
        let mut rng = Prng::from_seed(3);
        let x = random_input(&mut rng, 2, 1, 16, 16);
        let plain: Vec<f32> = net
            .forward(&x, false)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let (with, latent) = net.forward_with_latent(&x, false).unwrap();
        let with: Vec<f32> = with.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(plain, with);

        // Duplicated inputs produce identical latents.
        let one = x.narrow(0, 0, 1).unwrap();
        let dup = Tensor::cat(&[&one, &one], 0).unwrap();
        let (_, lat) = net.forward_with_latent(&dup, false).unwrap();
        let l0: Vec<f32> = lat.narrow(0, 0, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let l1: Vec<f32> = lat.narrow(0, 1, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(l0, l1);
    }

    #[test]
    fn image_tensor_round_trip() {
        let mut img = Image::zeros(1, 4, 4);
        img.set(0, 1, 2, 0.5);
        let t = tensor_of_images(&[&img, &img]).unwrap();
        assert_eq!(t.dims4().unwrap(), (2, 1, 4, 4));
        let back = images_from_tensor(&t).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], img);
    }
}

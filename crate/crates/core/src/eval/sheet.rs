use crate::corpus::{resize_bilinear, Image};
use crate::error::Result;

const GAP: usize = 4;
const QUERY_GAP: usize = 12;

/// Query thumbnail followed by its retrievals, left to right, each scaled
/// to `thumb x thumb` on a white background.
pub fn contact_sheet(id: &str, query: &Image, retrieved: &[Image], thumb: usize) -> Result<Image> {
    let n = retrieved.len();
    let width = thumb * (n + 1) + QUERY_GAP + GAP * n.saturating_sub(1);
    let mut sheet = Image::filled(id, width.max(thumb), thumb, [1.0; 3]);
    let mut left = 0;
    for (i, img) in std::iter::once(query).chain(retrieved).enumerate() {
        let px = resize_bilinear(img.pixels(), img.height, img.width, thumb, thumb)?;
        for r in 0..thumb {
            for c in 0..thumb {
                let o = (r * thumb + c) * 3;
                sheet.set_pixel(r, left + c, [px[o], px[o + 1], px[o + 2]]);
            }
        }
        left += thumb + if i == 0 { QUERY_GAP } else { GAP };
    }
    Ok(sheet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let q = Image::filled("q", 8, 8, [1.0, 0.0, 0.0]);
        let r = Image::filled("r", 4, 6, [0.0, 0.0, 1.0]);
        let s = contact_sheet("sheet", &q, &[r.clone(), r], 16).unwrap();
        assert_eq!((s.width, s.height), (16 * 3 + QUERY_GAP + GAP, 16));
        assert_eq!(s.pixel(5, 5), [1.0, 0.0, 0.0]);
        assert_eq!(s.pixel(5, 16 + 1), [1.0; 3]);
        assert_eq!(s.pixel(5, 16 + QUERY_GAP + 1), [0.0, 0.0, 1.0]);
    }
}

use super::{
    layout_box, lookup_style, FontAtlas, GlyphDocument, LayoutPlan, RenderError, StyleLookup,
    TextBox,
};
use crate::image::{RasterImage, Rgb};

/// Draws one box into `img` and returns the plan used.
pub fn draw_box(
    img: &mut RasterImage,
    tb: &TextBox,
    atlas: &FontAtlas,
    color: Rgb,
) -> Result<LayoutPlan, RenderError> {
    let plan = layout_box(&tb.text, &tb.bbox, tb.align, atlas)?;
    let s = plan.scale;
    for line in &plan.lines {
        for (i, c) in line.text.chars().enumerate() {
            let rows = atlas
                .glyph(c)
                .ok_or_else(|| RenderError::InvalidText(tb.text.clone()))?;
            let x0 = line.x + i as u32 * plan.glyph_width;
            for (gy, &row) in rows.iter().enumerate() {
                if row == 0 {
                    continue;
                }
                for gx in 0..atlas.cell_width() {
                    if row >> gx & 1 == 0 {
                        continue;
                    }
                    for dy in 0..s {
                        for dx in 0..s {
                            img.put(x0 + gx * s + dx, line.y + gy as u32 * s + dy, color);
                        }
                    }
                }
            }
        }
    }
    Ok(plan)
}

/// Renders `doc` with binary glyph coverage: every glyph pixel takes its
/// box's codebook color, every other pixel the background.
pub fn rasterize<C: StyleLookup>(
    doc: &GlyphDocument,
    codebook: &C,
) -> Result<RasterImage, RenderError> {
    let mut img = RasterImage::filled(doc.width, doc.height, doc.background);
    for (index, tb) in doc.boxes.iter().enumerate() {
        if !tb.bbox.fits_in(doc.width, doc.height) {
            return Err(RenderError::BoxOutsideCanvas {
                index,
                width: doc.width,
                height: doc.height,
            });
        }
        let (atlas, color) = lookup_style(codebook, tb)?;
        draw_box(&mut img, tb, atlas, color)?;
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::TinyBook;
    use super::super::{Align, BBox, CodebookKind};
    use super::*;
    use std::collections::BTreeSet;

    fn doc_with(boxes: Vec<TextBox>) -> GlyphDocument {
        GlyphDocument {
            boxes,
            ..GlyphDocument::new(96, 64)
        }
    }

    fn tb(bbox: BBox, text: &str, font_id: usize, color_id: usize) -> TextBox {
        TextBox {
            bbox,
            text: text.into(),
            font_id,
            color_id,
            align: Align::Left,
        }
    }

    #[test]
    fn empty_document_is_pure_background() {
        let mut doc = doc_with(vec![]);
        doc.background = Rgb([12, 34, 56]);
        let img = rasterize(&doc, &TinyBook::new()).unwrap();
        assert!(img.pixels().all(|p| p == Rgb([12, 34, 56])));
    }

    #[test]
    fn two_color_histogram() {
        let doc = doc_with(vec![tb(BBox::new(4, 4, 40, 20), "OK", 0, 0)]);
        let img = rasterize(&doc, &TinyBook::new()).unwrap();
        let colors: BTreeSet<Rgb> = img.pixels().collect();
        assert_eq!(colors, BTreeSet::from([Rgb::BLACK, Rgb::WHITE]));
    }

    #[test]
    fn lit_pixels_stay_inside_their_box() {
        let boxes = vec![
            tb(BBox::new(0, 0, 60, 40), "Hi there", 2, 1),
            tb(BBox::new(60, 0, 36, 64), "W", 3, 2),
        ];
        let doc = doc_with(boxes.clone());
        let img = rasterize(&doc, &TinyBook::new()).unwrap();
        for y in 0..img.height() {
            for x in 0..img.width() {
                let p = img.get(x, y);
                if p != Rgb::BLACK {
                    let owner = boxes.iter().position(|b| b.bbox.contains(x, y));
                    assert!(owner.is_some(), "stray pixel at ({x},{y})");
                    assert_eq!(p, TinyBook::new().colors[boxes[owner.unwrap()].color_id]);
                }
            }
        }
    }

    #[test]
    fn codebook_and_canvas_errors() {
        let book = TinyBook::new();
        let err = rasterize(
            &doc_with(vec![tb(BBox::new(0, 0, 40, 20), "a", 99, 0)]),
            &book,
        )
        .unwrap_err();
        assert_eq!(
            err,
            RenderError::UnknownCodebookId {
                kind: CodebookKind::Font,
                id: 99
            }
        );
        let err = rasterize(
            &doc_with(vec![tb(BBox::new(0, 0, 40, 20), "a", 0, 7)]),
            &book,
        )
        .unwrap_err();
        assert_eq!(
            err,
            RenderError::UnknownCodebookId {
                kind: CodebookKind::Color,
                id: 7
            }
        );
        let err = rasterize(
            &doc_with(vec![tb(BBox::new(90, 0, 40, 20), "a", 0, 0)]),
            &book,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            RenderError::BoxOutsideCanvas { index: 0, .. }
        ));
        let err = rasterize(
            &doc_with(vec![tb(BBox::new(0, 0, 10, 20), "ab", 0, 0)]),
            &book,
        )
        .unwrap_err();
        assert!(matches!(err, RenderError::Unfittable { .. }));
    }

    #[test]
    fn rendering_is_deterministic() {
        let doc = doc_with(vec![tb(
            BBox::new(3, 5, 90, 50),
            "same input same bits",
            1,
            2,
        )]);
        let book = TinyBook::new();
        assert_eq!(
            rasterize(&doc, &book).unwrap(),
            rasterize(&doc, &book).unwrap()
        );
    }
}

//! Text and image writers shared by the CLI and the examples.

use std::io::Write;

use crate::error::Result;
use crate::grid::Field2D;

/// Scientific notation with 17 significant digits (round-trips exactly).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// `M` lines of `M` comma-separated values; line `i` is the fixed-x row `x_i`.
pub fn write_field_csv<W: Write>(field: &Field2D, mut out: W) -> Result<()> {
    let m = field.grid().m();
    for row in field.values().chunks(m) {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Binary PGM (P5), 8 bits. Values are mapped linearly from `[min, max]`
/// to `[0, 255]`; both bounds are recorded in a header comment. A constant
/// field maps to 0.
pub fn write_field_pgm<W: Write>(field: &Field2D, mut out: W) -> Result<()> {
    let m = field.grid().m();
    let (lo, hi) = (field.min(), field.max());
    write!(
        out,
        "P5\n# min={} max={}\n{m} {m}\n255\n",
        fmt_f64(lo),
        fmt_f64(hi)
    )?;
    let span = hi - lo;
    let bytes: Vec<u8> = field
        .values()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn pgm_header_and_mapping() {
        let g = Grid2D::new(1.0, 4).unwrap();
        let f = Field2D::from_fn(g, |x, _| x);
        let mut buf = Vec::new();
        write_field_pgm(&f, &mut buf).unwrap();
        let header = "P5\n# min=0.0000000000000000e0 max=7.5000000000000000e-1\n4 4\n255\n";
        assert!(buf.starts_with(header.as_bytes()));
        let pixels = &buf[header.len()..];
        assert_eq!(pixels.len(), 16);
        assert_eq!(pixels[0], 0);
        assert_eq!(pixels[15], 255);
        assert_eq!(pixels[4], 85);
    }

    #[test]
    fn csv_matrix_shape() {
        let g = Grid2D::new(1.0, 4).unwrap();
        let f = Field2D::from_fn(g, |x, y| x + 10.0 * y);
        let mut buf = Vec::new();
        write_field_csv(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 4);
        let first: Vec<f64> = rows[1].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(first, vec![0.25, 2.75, 5.25, 7.75]);
    }
}

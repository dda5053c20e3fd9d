//! Minimal GeoTIFF codec: uncompressed strip images, any number of bands.
//!
//! Writing always produces little-endian, band-separate (planar) 64-bit float images
//! with GDAL-compatible band descriptions and a `nan` nodata tag. Reading additionally
//! accepts big-endian files, interleaved samples and 8..64-bit integer or float samples.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ChannelId, Grid, Raster, RowAxis};
use crate::error::{Error, Result};

const IMAGE_WIDTH: u16 = 256;
const IMAGE_LENGTH: u16 = 257;
const BITS_PER_SAMPLE: u16 = 258;
const COMPRESSION: u16 = 259;
const PHOTOMETRIC: u16 = 262;
const STRIP_OFFSETS: u16 = 273;
const SAMPLES_PER_PIXEL: u16 = 277;
const ROWS_PER_STRIP: u16 = 278;
const STRIP_BYTE_COUNTS: u16 = 279;
const PLANAR_CONFIG: u16 = 284;
const EXTRA_SAMPLES: u16 = 338;
const SAMPLE_FORMAT: u16 = 339;
const TILE_OFFSETS: u16 = 324;
const MODEL_PIXEL_SCALE: u16 = 33550;
const MODEL_TIEPOINT: u16 = 33922;
const MODEL_TRANSFORMATION: u16 = 34264;
const GEO_KEY_DIRECTORY: u16 = 34735;
const GEO_ASCII_PARAMS: u16 = 34737;
const GDAL_METADATA: u16 = 42112;
const GDAL_NODATA: u16 = 42113;

const GT_MODEL_TYPE: u16 = 1024;
const GT_RASTER_TYPE: u16 = 1025;
const GT_CITATION: u16 = 1026;
const PROJECTED_CS_TYPE: u16 = 3072;

const TYPE_BYTE: u16 = 1;
const TYPE_ASCII: u16 = 2;
const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;
const TYPE_SBYTE: u16 = 6;
const TYPE_SSHORT: u16 = 8;
const TYPE_SLONG: u16 = 9;
const TYPE_FLOAT: u16 = 11;
const TYPE_DOUBLE: u16 = 12;

/// Named bands on a grid, each band NaN-encoded independently.
///
/// Unlike [`Raster`], validity is per band, which is what a file holds.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack {
    pub grid: Grid,
    pub names: Vec<String>,
    /// One row-major band per name; NaN marks nodata.
    pub bands: Vec<Vec<f64>>,
    /// Dataset-level key/value metadata.
    pub metadata: Vec<(String, String)>,
}

impl BandStack {
    /// Invalid raster pixels become NaN in every band; channel ids become band names.
    pub fn from_raster(raster: &Raster) -> Self {
        let bands = (0..raster.n_channels()).map(|c| raster.band(c).to_vec()).collect();
        BandStack {
            grid: raster.grid().clone(),
            names: raster.channels().iter().map(|c| c.to_string()).collect(),
            bands,
            metadata: Vec::new(),
        }
    }

    /// Parses band names as channel ids; a pixel is valid iff finite in every band.
    pub fn to_raster(&self) -> Result<Raster> {
        let channels = self
            .names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<ChannelId>>>()?;
        self.to_raster_as(channels)
    }

    /// Like [`BandStack::to_raster`] with explicit channel ids.
    pub fn to_raster_as(&self, channels: Vec<ChannelId>) -> Result<Raster> {
        if channels.len() != self.bands.len() {
            return Err(Error::InvalidRaster(format!(
                "{} channel ids for {} bands",
                channels.len(),
                self.bands.len()
            )));
        }
        Raster::from_nan_encoded(self.grid.clone(), channels, self.bands.concat())
    }

    pub fn band_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn write_raster(path: &Path, raster: &Raster) -> Result<()> {
    write_geotiff(path, &BandStack::from_raster(raster))
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    read_geotiff(path)?.to_raster()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn xml_unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&amp;", "&")
}

fn gdal_metadata_xml(stack: &BandStack) -> String {
    let mut xml = String::from("<GDALMetadata>\n");
    for (k, v) in &stack.metadata {
        xml.push_str(&format!(
            "  <Item name=\"{}\">{}</Item>\n",
            xml_escape(k),
            xml_escape(v)
        ));
    }
    for (i, name) in stack.names.iter().enumerate() {
        xml.push_str(&format!(
            "  <Item name=\"DESCRIPTION\" sample=\"{i}\" role=\"description\">{}</Item>\n",
            xml_escape(name)
        ));
    }
    xml.push_str("</GDALMetadata>\n");
    xml
}

fn attr<'a>(tag: &'a str, name: &str) -> Option<&'a str> {
    let key = format!("{name}=\"");
    let start = tag.find(&key)? + key.len();
    let len = tag[start..].find('"')?;
    Some(&tag[start..start + len])
}

/// Band descriptions and dataset items from a GDAL metadata block.
fn parse_gdal_metadata(xml: &str) -> (BTreeMap<usize, String>, Vec<(String, String)>) {
    let mut names = BTreeMap::new();
    let mut items = Vec::new();
    let mut rest = xml;
    while let Some(open) = rest.find("<Item") {
        rest = &rest[open..];
        let Some(gt) = rest.find('>') else { break };
        let tag = &rest[..gt];
        let body_start = gt + 1;
        let Some(close) = rest[body_start..].find("</Item>") else { break };
        let body = xml_unescape(&rest[body_start..body_start + close]);
        let name = attr(tag, "name").map(xml_unescape).unwrap_or_default();
        match (attr(tag, "sample"), attr(tag, "role")) {
            (Some(s), Some("description")) => {
                if let Ok(i) = s.parse() {
                    names.insert(i, body);
                }
            }
            (None, _) => items.push((name, body)),
            _ => {}
        }
        rest = &rest[body_start + close..];
    }
    (names, items)
}

struct Entry {
    tag: u16,
    typ: u16,
    count: u32,
    bytes: Vec<u8>,
}

fn shorts(tag: u16, v: &[u16]) -> Entry {
    Entry {
        tag,
        typ: TYPE_SHORT,
        count: v.len() as u32,
        bytes: v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

fn longs(tag: u16, v: &[u32]) -> Entry {
    Entry {
        tag,
        typ: TYPE_LONG,
        count: v.len() as u32,
        bytes: v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

fn doubles(tag: u16, v: &[f64]) -> Entry {
    Entry {
        tag,
        typ: TYPE_DOUBLE,
        count: v.len() as u32,
        bytes: v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

fn ascii(tag: u16, s: &str) -> Entry {
    let mut bytes = s.as_bytes().to_vec();
    bytes.push(0);
    Entry {
        tag,
        typ: TYPE_ASCII,
        count: bytes.len() as u32,
        bytes,
    }
}

fn geo_keys(grid: &Grid) -> (Vec<u16>, String) {
    let citation = format!("{}|", grid.crs_id);
    let mut keys: Vec<[u16; 4]> = vec![
        [GT_MODEL_TYPE, 0, 1, 1],
        [GT_RASTER_TYPE, 0, 1, 1],
        [GT_CITATION, GEO_ASCII_PARAMS, (citation.len() - 1) as u16, 0],
    ];
    if let Some(code) = grid
        .crs_id
        .strip_prefix("EPSG:")
        .and_then(|c| c.parse::<u16>().ok())
    {
        keys.push([PROJECTED_CS_TYPE, 0, 1, code]);
    }
    let mut dir = vec![1, 1, 0, keys.len() as u16];
    for k in keys {
        dir.extend_from_slice(&k);
    }
    (dir, citation)
}

/// Writes a planar float64 GeoTIFF.
pub fn write_geotiff(path: &Path, stack: &BandStack) -> Result<()> {
    let grid = &stack.grid;
    let nb = stack.bands.len();
    if nb == 0 || nb != stack.names.len() {
        return Err(Error::format(path, "band stack needs matching names and bands"));
    }
    let n = grid.len();
    if stack.bands.iter().any(|b| b.len() != n) {
        return Err(Error::format(path, "band length does not match the grid"));
    }
    let band_bytes = n * 8;
    if (band_bytes as u64) * nb as u64 > u32::MAX as u64 / 2 {
        return Err(Error::format(path, "image too large for a classic TIFF"));
    }

    let mut out: Vec<u8> = Vec::with_capacity(16 + nb * band_bytes);
    out.extend_from_slice(b"II");
    out.extend_from_slice(&42u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    let mut offsets = Vec::with_capacity(nb);
    for band in &stack.bands {
        offsets.push(out.len() as u32);
        for v in band {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    let nb16 = nb as u16;
    let mut entries = vec![
        longs(IMAGE_WIDTH, &[grid.width as u32]),
        longs(IMAGE_LENGTH, &[grid.height as u32]),
        shorts(BITS_PER_SAMPLE, &vec![64; nb]),
        shorts(COMPRESSION, &[1]),
        shorts(PHOTOMETRIC, &[1]),
        longs(STRIP_OFFSETS, &offsets),
        shorts(SAMPLES_PER_PIXEL, &[nb16]),
        longs(ROWS_PER_STRIP, &[grid.height as u32]),
        longs(STRIP_BYTE_COUNTS, &vec![band_bytes as u32; nb]),
        shorts(PLANAR_CONFIG, &[2]),
        shorts(SAMPLE_FORMAT, &vec![3; nb]),
    ];
    if nb > 1 {
        entries.push(shorts(EXTRA_SAMPLES, &vec![0; nb - 1]));
    }
    match grid.row_axis {
        RowAxis::NorthUp => {
            entries.push(doubles(
                MODEL_PIXEL_SCALE,
                &[grid.pixel_size_x, grid.pixel_size_y, 0.0],
            ));
            entries.push(doubles(
                MODEL_TIEPOINT,
                &[0.0, 0.0, 0.0, grid.origin_x, grid.origin_y, 0.0],
            ));
        }
        RowAxis::SouthUp => {
            #[rustfmt::skip]
            let m = [
                grid.pixel_size_x, 0.0, 0.0, grid.origin_x,
                0.0, grid.pixel_size_y, 0.0, grid.origin_y,
                0.0, 0.0, 0.0, 0.0,
                0.0, 0.0, 0.0, 1.0,
            ];
            entries.push(doubles(MODEL_TRANSFORMATION, &m));
        }
    }
    let (dir, citation) = geo_keys(grid);
    entries.push(shorts(GEO_KEY_DIRECTORY, &dir));
    entries.push(ascii(GEO_ASCII_PARAMS, &citation));
    entries.push(ascii(GDAL_METADATA, &gdal_metadata_xml(stack)));
    entries.push(ascii(GDAL_NODATA, "nan"));
    entries.sort_by_key(|e| e.tag);

    if out.len() % 2 == 1 {
        out.push(0);
    }
    let ifd_offset = out.len();
    out[4..8].copy_from_slice(&(ifd_offset as u32).to_le_bytes());
    let ifd_len = 2 + entries.len() * 12 + 4;
    let mut extra_offset = ifd_offset + ifd_len;
    let mut extra: Vec<u8> = Vec::new();
    out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for e in &entries {
        out.extend_from_slice(&e.tag.to_le_bytes());
        out.extend_from_slice(&e.typ.to_le_bytes());
        out.extend_from_slice(&e.count.to_le_bytes());
        if e.bytes.len() <= 4 {
            let mut v = [0u8; 4];
            v[..e.bytes.len()].copy_from_slice(&e.bytes);
            out.extend_from_slice(&v);
        } else {
            out.extend_from_slice(&(extra_offset as u32).to_le_bytes());
            extra.extend_from_slice(&e.bytes);
            if e.bytes.len() % 2 == 1 {
                extra.push(0);
            }
            extra_offset = ifd_offset + ifd_len + extra.len();
        }
    }
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&extra);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy)]
enum Order {
    Little,
    Big,
}

struct Reader<'a> {
    buf: &'a [u8],
    order: Order,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn slice(&self, off: usize, len: usize) -> Result<&'a [u8]> {
        self.buf
            .get(off..off.checked_add(len).unwrap_or(usize::MAX))
            .ok_or_else(|| Error::format(self.path, format!("truncated at offset {off}")))
    }

    fn u16(&self, off: usize) -> Result<u16> {
        let b: [u8; 2] = self.slice(off, 2)?.try_into().unwrap();
        Ok(match self.order {
            Order::Little => u16::from_le_bytes(b),
            Order::Big => u16::from_be_bytes(b),
        })
    }

    fn u32(&self, off: usize) -> Result<u32> {
        let b: [u8; 4] = self.slice(off, 4)?.try_into().unwrap();
        Ok(match self.order {
            Order::Little => u32::from_le_bytes(b),
            Order::Big => u32::from_be_bytes(b),
        })
    }

    fn u64(&self, off: usize) -> Result<u64> {
        let b: [u8; 8] = self.slice(off, 8)?.try_into().unwrap();
        Ok(match self.order {
            Order::Little => u64::from_le_bytes(b),
            Order::Big => u64::from_be_bytes(b),
        })
    }
}

struct Field {
    typ: u16,
    count: usize,
    offset: usize,
}

fn type_size(typ: u16) -> usize {
    match typ {
        TYPE_BYTE | TYPE_ASCII | TYPE_SBYTE | 7 => 1,
        TYPE_SHORT | TYPE_SSHORT => 2,
        TYPE_LONG | TYPE_SLONG | TYPE_FLOAT => 4,
        _ => 8,
    }
}

impl Field {
    fn uints(&self, r: &Reader) -> Result<Vec<u64>> {
        (0..self.count)
            .map(|i| match self.typ {
                TYPE_BYTE => Ok(r.slice(self.offset + i, 1)?[0] as u64),
                TYPE_SHORT => Ok(r.u16(self.offset + 2 * i)? as u64),
                TYPE_LONG => Ok(r.u32(self.offset + 4 * i)? as u64),
                16 => r.u64(self.offset + 8 * i),
                t => Err(Error::format(r.path, format!("expected integer field, got type {t}"))),
            })
            .collect()
    }

    fn floats(&self, r: &Reader) -> Result<Vec<f64>> {
        (0..self.count)
            .map(|i| match self.typ {
                TYPE_DOUBLE => Ok(f64::from_bits(r.u64(self.offset + 8 * i)?)),
                TYPE_FLOAT => Ok(f32::from_bits(r.u32(self.offset + 4 * i)?) as f64),
                t => Err(Error::format(r.path, format!("expected float field, got type {t}"))),
            })
            .collect()
    }

    fn text(&self, r: &Reader) -> Result<String> {
        let raw = r.slice(self.offset, self.count)?;
        let end = raw.iter().position(|b| *b == 0).unwrap_or(raw.len());
        Ok(String::from_utf8_lossy(&raw[..end]).into_owned())
    }
}

fn decode_sample(raw: &[u8], fmt: u16, bits: u16, order: Order) -> Option<f64> {
    macro_rules! num {
        ($t:ty) => {{
            let b = raw.try_into().ok()?;
            match order {
                Order::Little => <$t>::from_le_bytes(b),
                Order::Big => <$t>::from_be_bytes(b),
            }
        }};
    }
    Some(match (fmt, bits) {
        (1, 8) => raw[0] as f64,
        (2, 8) => raw[0] as i8 as f64,
        (1, 16) => num!(u16) as f64,
        (2, 16) => num!(i16) as f64,
        (1, 32) => num!(u32) as f64,
        (2, 32) => num!(i32) as f64,
        (1, 64) => num!(u64) as f64,
        (2, 64) => num!(i64) as f64,
        (3, 32) => num!(f32) as f64,
        (3, 64) => num!(f64),
        _ => return None,
    })
}

/// Reads the first image of a GeoTIFF.
pub fn read_geotiff(path: &Path) -> Result<BandStack> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let order = match buf.get(0..2) {
        Some(b"II") => Order::Little,
        Some(b"MM") => Order::Big,
        _ => return Err(Error::format(path, "not a TIFF file")),
    };
    let r = Reader {
        buf: &buf,
        order,
        path,
    };
    match r.u16(2)? {
        42 => {}
        43 => return Err(Error::format(path, "BigTIFF is not supported")),
        m => return Err(Error::format(path, format!("bad TIFF magic {m}"))),
    }
    let ifd = r.u32(4)? as usize;
    let n_entries = r.u16(ifd)? as usize;
    let mut fields = BTreeMap::new();
    for k in 0..n_entries {
        let e = ifd + 2 + 12 * k;
        let tag = r.u16(e)?;
        let typ = r.u16(e + 2)?;
        let count = r.u32(e + 4)? as usize;
        let size = type_size(typ) * count;
        let offset = if size <= 4 { e + 8 } else { r.u32(e + 8)? as usize };
        fields.insert(tag, Field { typ, count, offset });
    }
    let get = |tag: u16| {
        fields
            .get(&tag)
            .ok_or_else(|| Error::format(path, format!("missing TIFF tag {tag}")))
    };
    let uint = |tag: u16, default: u64| -> Result<u64> {
        match fields.get(&tag) {
            Some(f) => Ok(f.uints(&r)?.first().copied().unwrap_or(default)),
            None => Ok(default),
        }
    };

    if fields.contains_key(&TILE_OFFSETS) {
        return Err(Error::format(path, "tiled TIFF layout is not supported"));
    }
    if uint(COMPRESSION, 1)? != 1 {
        return Err(Error::format(path, "only uncompressed TIFF is supported"));
    }
    let width = get(IMAGE_WIDTH)?.uints(&r)?[0] as usize;
    let height = get(IMAGE_LENGTH)?.uints(&r)?[0] as usize;
    let nb = uint(SAMPLES_PER_PIXEL, 1)? as usize;
    let bits = uint(BITS_PER_SAMPLE, 1)? as u16;
    if let Some(f) = fields.get(&BITS_PER_SAMPLE) {
        if f.uints(&r)?.iter().any(|b| *b != bits as u64) {
            return Err(Error::format(path, "mixed bit depths are not supported"));
        }
    }
    let fmt = uint(SAMPLE_FORMAT, 1)? as u16;
    let planar = uint(PLANAR_CONFIG, 1)? == 2;
    let rows_per_strip = (uint(ROWS_PER_STRIP, height as u64)? as usize).clamp(1, height.max(1));
    let strip_offsets = get(STRIP_OFFSETS)?.uints(&r)?;
    let bps = (bits / 8) as usize;
    if bits % 8 != 0 || decode_sample(&vec![0; bps], fmt, bits, order).is_none() {
        return Err(Error::format(
            path,
            format!("unsupported sample type: format {fmt}, {bits} bits"),
        ));
    }

    let nodata = match fields.get(&GDAL_NODATA) {
        Some(f) => f.text(&r)?.trim().parse::<f64>().ok(),
        None => None,
    };
    let n = width * height;
    let mut bands = vec![vec![0.0; n]; nb];
    let strips_per_band = height.div_ceil(rows_per_strip);
    let expected = if planar { strips_per_band * nb } else { strips_per_band };
    if strip_offsets.len() < expected {
        return Err(Error::format(path, "too few strips for the image size"));
    }
    let decode = |off: usize| -> Result<f64> {
        let raw = r.slice(off, bps)?;
        let v = decode_sample(raw, fmt, bits, order).unwrap();
        Ok(match nodata {
            Some(nd) if v == nd => f64::NAN,
            _ => v,
        })
    };
    for (s, &start) in strip_offsets.iter().take(expected).enumerate() {
        let (band, strip) = if planar {
            (Some(s / strips_per_band), s % strips_per_band)
        } else {
            (None, s)
        };
        let row0 = strip * rows_per_strip;
        let rows = rows_per_strip.min(height - row0);
        let start = start as usize;
        for p in 0..rows * width {
            let pix = row0 * width + p;
            match band {
                Some(b) => bands[b][pix] = decode(start + p * bps)?,
                None => {
                    for (b, band) in bands.iter_mut().enumerate() {
                        band[pix] = decode(start + (p * nb + b) * bps)?;
                    }
                }
            }
        }
    }

    let (crs_id, citation_crs) = read_crs(&fields, &r)?;
    let grid = if let Some(t) = fields.get(&MODEL_TRANSFORMATION) {
        let m = t.floats(&r)?;
        if m.len() < 16 || m[1] != 0.0 || m[4] != 0.0 || m[0] <= 0.0 || m[5] == 0.0 {
            return Err(Error::format(path, "rotated model transformations are not supported"));
        }
        Grid {
            origin_x: m[3],
            origin_y: m[7],
            pixel_size_x: m[0],
            pixel_size_y: m[5].abs(),
            row_axis: if m[5] < 0.0 { RowAxis::NorthUp } else { RowAxis::SouthUp },
            width,
            height,
            crs_id: citation_crs.unwrap_or(crs_id),
        }
    } else {
        let scale = get(MODEL_PIXEL_SCALE)?.floats(&r)?;
        let tie = get(MODEL_TIEPOINT)?.floats(&r)?;
        if scale.len() < 2 || tie.len() < 6 {
            return Err(Error::format(path, "malformed georeferencing tags"));
        }
        Grid {
            origin_x: tie[3] - tie[0] * scale[0],
            origin_y: tie[4] + tie[1] * scale[1],
            pixel_size_x: scale[0],
            pixel_size_y: scale[1],
            row_axis: RowAxis::NorthUp,
            width,
            height,
            crs_id: citation_crs.unwrap_or(crs_id),
        }
    };
    grid.validate()?;

    let (descriptions, metadata) = match fields.get(&GDAL_METADATA) {
        Some(f) => parse_gdal_metadata(&f.text(&r)?),
        None => (BTreeMap::new(), Vec::new()),
    };
    let names = (0..nb)
        .map(|i| descriptions.get(&i).cloned().unwrap_or_else(|| format!("band{}", i + 1)))
        .collect();
    Ok(BandStack {
        grid,
        names,
        bands,
        metadata,
    })
}

/// CRS from the citation (exact round trip of our own files) and the EPSG code key.
fn read_crs(fields: &BTreeMap<u16, Field>, r: &Reader) -> Result<(String, Option<String>)> {
    let Some(dir) = fields.get(&GEO_KEY_DIRECTORY) else {
        return Ok(("unknown".into(), None));
    };
    let keys = dir.uints(r)?;
    let ascii_params = match fields.get(&GEO_ASCII_PARAMS) {
        Some(f) => f.text(r)?,
        None => String::new(),
    };
    let mut epsg = None;
    let mut citation = None;
    let n = keys.get(3).copied().unwrap_or(0) as usize;
    for k in 0..n {
        let Some(entry) = keys.get(4 + 4 * k..8 + 4 * k) else { break };
        let (id, loc, count, value) = (entry[0] as u16, entry[1] as u16, entry[2], entry[3]);
        if id == PROJECTED_CS_TYPE && loc == 0 {
            epsg = Some(format!("EPSG:{value}"));
        }
        if id == GT_CITATION && loc == GEO_ASCII_PARAMS {
            let s: String = ascii_params
                .chars()
                .skip(value as usize)
                .take(count as usize)
                .collect();
            citation = Some(s.trim_end_matches('|').to_string());
        }
    }
    Ok((epsg.clone().unwrap_or_else(|| "unknown".into()), citation.or(epsg)))
}
